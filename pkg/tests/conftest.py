import math
from collections import deque

import pytest
from hypothesis import settings

from sdvsim.world_map import ReferencePath, arc_centerline, build_route, map_from_dict, straight_centerline

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


def straight_doc(length=100.0):
    return {"format_version": 1, "segments": [{"id": 1, "centerline": [[0, 0], [length, 0]], "width": 3.5}]}


def roundabout_doc(radius=15.0, arm=60.0):
    """Four-leg junction of 12 segments: 4 approaches, 4 ring quarters, 4 exits.

    Approach i joins ring quarter i; quarter i continues to quarter i+1 and exits
    on arm i+1. Arms point east (0), north (1), west (2), south (3).
    """
    segs = []
    for i in range(4):
        ang = i * math.pi / 2
        nxt = (i + 1) % 4
        ux, uy = math.cos(ang), math.sin(ang)
        # approach drives inward along arm i, offset to its right-hand side
        far = (ux * (radius + arm) + 1.75 * uy, uy * (radius + arm) - 1.75 * ux)
        near = (ux * radius + 1.75 * uy, uy * radius - 1.75 * ux)
        segs.append({"id": 1 + i, "centerline": straight_centerline(far, near, 5.0), "width": 3.5, "successors": [5 + i]})
        ring = arc_centerline((0, 0), radius, ang, ang + math.pi / 2, 1.0)
        segs.append({"id": 5 + i, "centerline": ring, "width": 3.5, "successors": [5 + nxt, 9 + nxt]})
        nang = nxt * math.pi / 2
        vx, vy = math.cos(nang), math.sin(nang)
        e0 = (vx * radius - 1.75 * vy, vy * radius + 1.75 * vx)
        e1 = (vx * (radius + arm) - 1.75 * vy, vy * (radius + arm) + 1.75 * vx)
        segs.append({"id": 9 + nxt, "centerline": straight_centerline(e0, e1, 5.0), "width": 3.5})
    segs.sort(key=lambda s: s["id"])
    return {"format_version": 1, "name": "roundabout", "segments": segs}


def bfs_path(adjacency, src, dst):
    prev = {src: None}
    q = deque([src])
    while q:
        n = q.popleft()
        if n == dst:
            break
        for m in sorted(adjacency[n]):
            if m not in prev:
                prev[m] = n
                q.append(m)
    if dst not in prev:
        return None
    out = [dst]
    while prev[out[-1]] is not None:
        out.append(prev[out[-1]])
    return out[::-1]


@pytest.fixture(scope="session")
def straight_map():
    return map_from_dict(straight_doc())


@pytest.fixture(scope="session")
def roundabout_map():
    return map_from_dict(roundabout_doc())


@pytest.fixture(scope="session")
def straight_path():
    return ReferencePath([(0, 0), (50, 0), (100, 0), (200, 0)])


@pytest.fixture(scope="session")
def quarter_circle_path():
    return ReferencePath(arc_centerline((0, 0), 20.0, -math.pi / 2, 0.0, 0.5))


@pytest.fixture(scope="session")
def two_lane_map():
    from importlib import resources

    from sdvsim.world_map import load_map

    return load_map(resources.files("sdvsim") / "data" / "maps" / "two_lane.yaml")


__all__ = ["straight_doc", "roundabout_doc", "bfs_path", "build_route"]
