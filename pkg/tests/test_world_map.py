import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import bfs_path, roundabout_doc, straight_doc
from sdvsim.frenet import CartesianState
from sdvsim.world_map import (
    MapError,
    ProjectionError,
    ReferencePath,
    RouteError,
    arc_centerline,
    build_route,
    fit_reference_path,
    load_map,
    map_from_dict,
    map_to_dict,
    replan_route,
)


def test_single_segment_map_has_no_edges(straight_map):
    assert len(straight_map.segments) == 1
    assert straight_map.edges == set()


def test_two_segments_give_one_edge():
    m = map_from_dict({"format_version": 1, "segments": [
        {"id": 1, "centerline": [[0, 0], [50, 0]], "width": 3.5, "successors": [2]},
        {"id": 2, "centerline": [[50, 0], [100, 0]], "width": 3.5},
    ]})
    assert m.edges == {(1, 2)}


def test_roundabout_all_pairs_reachable(roundabout_map):
    assert len(roundabout_map.segments) == 12
    doc = roundabout_doc()
    entries = {s["id"]: s["centerline"][0] for s in doc["segments"] if s["id"] <= 4}
    exits = {s["id"]: s["centerline"][-1] for s in doc["segments"] if s["id"] >= 9}
    for (a, pa), (b, pb) in itertools.product(entries.items(), exits.items()):
        assert bfs_path(roundabout_map.adjacency, a, b) is not None
        route = build_route(roundabout_map, [pa, pb])
        assert list(route.segment_ids) == bfs_path(roundabout_map.adjacency, a, b)


def test_south_to_east_chain(roundabout_map):
    doc = roundabout_doc()
    south = doc["segments"][3]["centerline"][0]
    east = doc["segments"][8]["centerline"][-1]
    route = build_route(roundabout_map, [south, east])
    assert route.segment_ids == (4, 8, 9)
    assert route.segment_ids == tuple(bfs_path(roundabout_map.adjacency, 4, 9))


@pytest.mark.parametrize("doc,msg", [
    ({"format_version": 1, "segments": [{"id": 1, "centerline": [[0, 0]], "width": 3}]}, "degenerate"),
    ({"format_version": 1, "segments": [{"id": 1, "centerline": [[0, 0], [1, 0]], "width": 3, "successors": [7]}]}, "dangling"),
    ({"format_version": 2, "segments": []}, "format_version"),
    ({"format_version": 1, "segments": [{"id": 1, "centerline": [[0, 0], [1, 0]], "width": -1}]}, "width"),
])
def test_malformed_maps(doc, msg):
    with pytest.raises(MapError, match=msg):
        map_from_dict(doc)


def test_map_round_trip(roundabout_map):
    again = map_from_dict(map_to_dict(roundabout_map))
    assert again.edges == roundabout_map.edges
    for sid, seg in roundabout_map.segments.items():
        assert np.allclose(again.segments[sid].points, seg.points, atol=1e-6)


def test_load_map_from_text():
    m = load_map("format_version: 1\nsegments:\n  - {id: 3, centerline: [[0, 0], [10, 0]], width: 3}\n")
    assert list(m.segments) == [3]


def test_single_segment_route(straight_map):
    route = build_route(straight_map, [(0, 0), (90, 0)])
    assert route.segment_ids == (1,)
    assert route.remaining_length == pytest.approx(90.0)


def test_off_map_point_has_no_route(straight_map):
    with pytest.raises(RouteError, match="route point 1"):
        build_route(straight_map, [(0, 0), (50, 40)])


def test_replan_from_right_lane(two_lane_map):
    original = build_route(two_lane_map, [(0, 3.5), (500, 3.5)])
    assert original.segment_ids == (2,)
    cur = CartesianState(x=100.0, y=0.2, x_dot=10.0)
    route = replan_route(two_lane_map, cur, [(500, 3.5)])
    assert route.segment_ids[0] == 1
    assert route.segment_ids == tuple(bfs_path(two_lane_map.adjacency, 1, 2))


def test_replan_on_route_is_suffix(roundabout_map):
    doc = roundabout_doc()
    south, east = doc["segments"][3]["centerline"][0], doc["segments"][8]["centerline"][-1]
    original = build_route(roundabout_map, [south, east])
    cur = CartesianState(x=south[0], y=south[1] + 20.0)
    route = replan_route(roundabout_map, cur, [east])
    n = len(route.segment_ids)
    assert route.segment_ids == original.segment_ids[-n:]


def test_replan_past_goal_is_degenerate(straight_map):
    route = replan_route(straight_map, CartesianState(x=80.0), [(60.0, 0.0)])
    assert len(route.segment_ids) == 1
    assert route.remaining_length == 0.0


def test_route_serialization_is_stable(roundabout_map):
    doc = roundabout_doc()
    pts = [doc["segments"][0]["centerline"][0], doc["segments"][10]["centerline"][-1]]
    assert build_route(roundabout_map, pts).serialize() == build_route(roundabout_map, pts).serialize()


def test_straight_reference_path_is_the_line():
    route = build_route(map_from_dict(straight_doc(300)), [(0, 0), (300, 0)])
    path = fit_reference_path(route, (150, 0))
    s = np.linspace(0, path.length, 500)
    assert np.max(np.abs(path.point(s)[:, 1])) < 1e-9
    assert path.length == pytest.approx(100.0, abs=1e-9)


def test_quarter_circle_curvature(quarter_circle_path):
    assert quarter_circle_path.curvature(np.array([quarter_circle_path.length / 2]))[0] == pytest.approx(0.05, abs=1e-3)
    assert quarter_circle_path.length == pytest.approx(math.pi * 10.0, rel=1e-3)


def test_far_position_projection_error(straight_map):
    route = build_route(straight_map, [(0, 0), (100, 0)])
    with pytest.raises(ProjectionError):
        fit_reference_path(route, (50, 200), window=100)


@given(st.lists(st.integers(0, 11), min_size=2, max_size=4))
def test_route_is_a_graph_path(idx):
    m = map_from_dict(roundabout_doc())
    doc = roundabout_doc()
    pts = [doc["segments"][i]["centerline"][len(doc["segments"][i]["centerline"]) // 2] for i in idx]
    try:
        route = build_route(m, pts)
    except RouteError:
        return
    for a, b in zip(route.segment_ids, route.segment_ids[1:]):
        assert (a, b) in m.edges


@given(st.floats(0.0, 1.0), st.floats(-1.5, 1.5))
def test_projection_recovers_arc_position(frac, d):
    path = ReferencePath(arc_centerline((0, 0), 30.0, 0.0, math.pi / 2, 1.0))
    s = frac * path.length
    xy = path.point(np.array([s]))[0] + d * path.normal(np.array([s]))[0]
    s2, d2 = path.project(xy)
    assert s2 == pytest.approx(s, abs=1e-6)
    assert d2 == pytest.approx(d, abs=1e-6)
