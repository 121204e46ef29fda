"""Static road network: lane segments, routing and reference paths.

Maps are small YAML documents (``format_version: 1``) listing lane segments with
their centerlines, widths and connectivity. Routes are built on the routing
graph made of successor and lateral-neighbor edges, and each vehicle plans in
the Frenet frame of a cubic spline fitted around its position on the route.
"""

from __future__ import annotations

import bisect
import heapq
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree

FORMAT_VERSION = 1
SNAP_TOLERANCE = 3.5  # m, lateral tolerance when snapping route points
DEFAULT_WINDOW = 100.0  # m, 50 m behind and 50 m ahead
ARC_SAMPLE_STEP = 0.1  # m
_MIN_POINT_SPACING = 1e-3


class MapError(ValueError):
    """Raised when a map document is malformed."""


class RouteError(ValueError):
    """Raised when no route connects the requested points."""


class ProjectionError(ValueError):
    """Raised when a point cannot be projected onto a path."""


@dataclass(frozen=True)
class LaneSegment:
    id: int
    centerline: tuple[tuple[float, float], ...]
    width: float
    successors: tuple[int, ...] = ()
    left: Optional[int] = None
    right: Optional[int] = None
    speed_limit: float = 13.9
    stop_line: Optional[tuple[float, float]] = None
    signal: Optional[int] = None

    @property
    def points(self) -> np.ndarray:
        return np.asarray(self.centerline, dtype=float)

    @property
    def length(self) -> float:
        return float(np.sum(np.hypot(*np.diff(self.points, axis=0).T)))


def _polyline_project(points: np.ndarray, p: np.ndarray) -> tuple[float, float, float]:
    """Closest point on a polyline: (arc length, distance, signed offset)."""
    a, b = points[:-1], points[1:]
    ab = b - a
    seg_len2 = np.einsum("ij,ij->i", ab, ab)
    u = np.clip(np.einsum("ij,ij->i", p - a, ab) / seg_len2, 0.0, 1.0)
    closest = a + u[:, None] * ab
    dist = np.hypot(*(p - closest).T)
    i = int(np.argmin(dist))
    seg_len = np.sqrt(seg_len2)
    s = float(np.sum(seg_len[:i]) + u[i] * seg_len[i])
    cross = ab[i, 0] * (p[1] - a[i, 1]) - ab[i, 1] * (p[0] - a[i, 0])
    return s, float(dist[i]), float(math.copysign(dist[i], cross))


@dataclass(frozen=True)
class Map:
    segments: dict[int, LaneSegment]
    name: str = ""

    def __post_init__(self):
        adjacency: dict[int, tuple[int, ...]] = {}
        for seg in self.segments.values():
            nbrs = list(seg.successors)
            for lat in (seg.left, seg.right):
                if lat is not None and lat not in nbrs:
                    nbrs.append(lat)
            adjacency[seg.id] = tuple(nbrs)
        object.__setattr__(self, "_adjacency", adjacency)

    @property
    def adjacency(self) -> dict[int, tuple[int, ...]]:
        return self._adjacency  # type: ignore[attr-defined]

    @property
    def edges(self) -> set[tuple[int, int]]:
        return {(a, b) for a, nbrs in self.adjacency.items() for b in nbrs}

    def is_lateral(self, a: int, b: int) -> bool:
        seg = self.segments[a]
        return b in (seg.left, seg.right) and b not in seg.successors

    def locate(self, point: Sequence[float], tolerance: float = SNAP_TOLERANCE) -> tuple[int, float, float]:
        """Snap a point to the nearest centerline.

        Returns ``(segment id, arc length along it, signed lateral offset)``.
        Ties on distance go to the lowest segment id.
        """
        p = np.asarray(point, dtype=float)
        best = None
        for sid in sorted(self.segments):
            s, dist, off = _polyline_project(self.segments[sid].points, p)
            if best is None or dist < best[0] - 1e-12:
                best = (dist, sid, s, off)
        if best is None or best[0] > tolerance:
            raise RouteError(f"point ({p[0]:.3f}, {p[1]:.3f}) is not on any lane segment")
        return best[1], best[2], best[3]

    def neighbor_lanes(self, seg_id: int) -> tuple[int, int]:
        """Number of lanes reachable by lateral hops to the (left, right)."""
        counts = []
        for side in ("left", "right"):
            n, cur, seen = 0, self.segments[seg_id], {seg_id}
            while getattr(cur, side) is not None and getattr(cur, side) not in seen:
                seen.add(getattr(cur, side))
                cur = self.segments[getattr(cur, side)]
                n += 1
            counts.append(n)
        return counts[0], counts[1]


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def map_from_dict(doc: dict, name: str = "") -> Map:
    if not isinstance(doc, dict):
        raise MapError("map document must be a mapping")
    if doc.get("format_version") != FORMAT_VERSION:
        raise MapError(f"unsupported format_version {doc.get('format_version')!r}")
    raw = doc.get("segments")
    if not isinstance(raw, list) or not raw:
        raise MapError("map has no segments")
    segments: dict[int, LaneSegment] = {}
    for entry in raw:
        sid = entry.get("id") if isinstance(entry, dict) else None
        if not isinstance(sid, int):
            raise MapError(f"segment without integer id: {entry!r}")
        if sid in segments:
            raise MapError(f"segment {sid}: duplicate id")
        try:
            pts = tuple((float(x), float(y)) for x, y in entry["centerline"])
            width = float(entry["width"])
        except (KeyError, TypeError, ValueError) as exc:
            raise MapError(f"segment {sid}: bad centerline or width ({exc})") from None
        if len(pts) < 2:
            raise MapError(f"segment {sid}: degenerate centerline (fewer than 2 points)")
        arr = np.asarray(pts)
        if np.any(np.hypot(*np.diff(arr, axis=0).T) < _MIN_POINT_SPACING):
            raise MapError(f"segment {sid}: degenerate centerline (repeated point)")
        if not np.all(np.isfinite(arr)):
            raise MapError(f"segment {sid}: non-finite centerline coordinate")
        if width <= 0:
            raise MapError(f"segment {sid}: width must be positive")
        reg = entry.get("regulatory") or {}
        stop_line = reg.get("stop_line")
        segments[sid] = LaneSegment(
            id=sid,
            centerline=pts,
            width=width,
            successors=tuple(int(s) for s in entry.get("successors", []) or []),
            left=entry.get("left"),
            right=entry.get("right"),
            speed_limit=float(entry.get("speed_limit", 13.9)),
            stop_line=tuple(float(c) for c in stop_line) if stop_line is not None else None,
            signal=reg.get("signal"),
        )
    for seg in segments.values():
        refs = list(seg.successors) + [r for r in (seg.left, seg.right) if r is not None]
        for ref in refs:
            if ref not in segments:
                raise MapError(f"segment {seg.id}: dangling reference to segment {ref}")
    return Map(segments=segments, name=name or str(doc.get("name", "")))


def map_to_dict(m: Map) -> dict:
    out = []
    for sid in sorted(m.segments):
        seg = m.segments[sid]
        entry: dict = {
            "id": sid,
            "centerline": [[float(_fmt(x)), float(_fmt(y))] for x, y in seg.centerline],
            "width": seg.width,
            "successors": list(seg.successors),
            "left": seg.left,
            "right": seg.right,
            "speed_limit": seg.speed_limit,
        }
        if seg.stop_line is not None or seg.signal is not None:
            entry["regulatory"] = {"stop_line": list(seg.stop_line) if seg.stop_line else None, "signal": seg.signal}
        out.append(entry)
    return {"format_version": FORMAT_VERSION, "name": m.name, "segments": out}


def load_map(source) -> Map:
    """Load a map from a path, YAML text or an already parsed mapping."""
    if isinstance(source, dict):
        return map_from_dict(source)
    path = Path(source) if not (isinstance(source, str) and "\n" in source) else None
    try:
        doc = yaml.safe_load(path.read_text() if path is not None else source)
    except yaml.YAMLError as exc:
        raise MapError(f"map does not parse: {exc}") from None
    return map_from_dict(doc, name=path.stem if path is not None else "")


@dataclass(frozen=True)
class RoutePlan:
    segment_ids: tuple[int, ...]
    global_path: tuple[tuple[float, float], ...]
    goal: tuple[float, float]
    start: tuple[float, float] = (0.0, 0.0)

    @property
    def path_array(self) -> np.ndarray:
        return np.asarray(self.global_path, dtype=float)

    @property
    def length(self) -> float:
        pts = self.path_array
        return float(np.sum(np.hypot(*np.diff(pts, axis=0).T))) if len(pts) > 1 else 0.0

    @property
    def remaining_length(self) -> float:
        """Path length from the start point to the goal."""
        pts = self.path_array
        if len(pts) < 2 or np.allclose(pts[0], pts[-1]):
            return 0.0
        s0, _, _ = _polyline_project(pts, np.asarray(self.start))
        s1, _, _ = _polyline_project(pts, np.asarray(self.goal))
        return max(0.0, s1 - s0)

    def serialize(self) -> str:
        lines = ["segments: " + " ".join(str(s) for s in self.segment_ids)]
        lines += [f"{_fmt(x)} {_fmt(y)}" for x, y in self.global_path]
        lines.append(f"goal: {_fmt(self.goal[0])} {_fmt(self.goal[1])}")
        return "\n".join(lines) + "\n"


def _shortest_leg(m: Map, src: int, dst: int) -> Optional[list[int]]:
    """Fewest segments, then shortest centerline, then lowest ids at first divergence."""
    heap: list = [(0, 0.0, (src,))]
    best: dict[int, tuple[int, float]] = {}
    while heap:
        hops, length, path = heapq.heappop(heap)
        node = path[-1]
        if node == dst and hops > 0:
            return list(path)
        if node in best and len(path) > 1:
            continue
        if len(path) > 1:
            best[node] = (hops, length)
        for nxt in sorted(m.adjacency[node]):
            if nxt in best:
                continue
            heapq.heappush(heap, (hops + 1, round(length + m.segments[nxt].length, 9), path + (nxt,)))
    return None


def _assemble_path(m: Map, seg_ids: Sequence[int]) -> list[tuple[float, float]]:
    pts: list[tuple[float, float]] = []
    part_start = 0
    prev = None
    for sid in seg_ids:
        seg = m.segments[sid]
        if prev is not None and m.is_lateral(prev, sid):
            # switch to the neighbor lane from where the previous lane began
            entry = np.asarray(pts[part_start])
            s_entry, _, _ = _polyline_project(seg.points, entry)
            del pts[part_start:]
            tail = _polyline_slice(seg.points, s_entry, seg.length)
        else:
            tail = seg.points
        part_start = len(pts)
        for p in tail:
            tp = (float(p[0]), float(p[1]))
            if pts and math.hypot(tp[0] - pts[-1][0], tp[1] - pts[-1][1]) < _MIN_POINT_SPACING:
                continue
            pts.append(tp)
        prev = sid
    return pts


def _polyline_slice(points: np.ndarray, s_from: float, s_to: float) -> np.ndarray:
    cum = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(points, axis=0).T))])
    inner = points[(cum > s_from) & (cum < s_to)]
    a = np.array([np.interp(s_from, cum, points[:, 0]), np.interp(s_from, cum, points[:, 1])])
    b = np.array([np.interp(s_to, cum, points[:, 0]), np.interp(s_to, cum, points[:, 1])])
    out = [a, *inner]
    if np.hypot(*(b - out[-1])) > _MIN_POINT_SPACING:
        out.append(b)
    return np.asarray(out)


def build_route(m: Map, route_points: Sequence[Sequence[float]]) -> RoutePlan:
    """Shortest route through the lane graph visiting ``route_points`` in order."""
    if len(route_points) < 1:
        raise RouteError("route needs at least one point")
    snapped = []
    for i, p in enumerate(route_points):
        try:
            snapped.append(m.locate(p))
        except RouteError:
            raise RouteError(f"route point {i} ({p[0]}, {p[1]}) is unreachable: not on any lane") from None
    seq = [snapped[0][0]]
    for i in range(1, len(snapped)):
        (a, sa, _), (b, sb, _) = snapped[i - 1], snapped[i]
        if a == b and sb >= sa - 1e-9:
            continue
        leg = _shortest_leg(m, a, b)
        if leg is None:
            raise RouteError(f"route point {i} ({route_points[i][0]}, {route_points[i][1]}) is unreachable")
        seq.extend(leg[1:])
    goal = (float(route_points[-1][0]), float(route_points[-1][1]))
    start = (float(route_points[0][0]), float(route_points[0][1]))
    return RoutePlan(tuple(seq), tuple(_assemble_path(m, seq)), goal, start)


def replan_route(m: Map, current, remaining_points: Sequence[Sequence[float]]) -> RoutePlan:
    """New route from the vehicle's current position through the remaining points."""
    pos = (float(current.x), float(current.y))
    sid, s_cur, _ = m.locate(pos)
    if not remaining_points:
        return RoutePlan((sid,), (pos, pos), pos, pos)
    gid, s_goal, _ = m.locate(remaining_points[-1])
    if len(remaining_points) == 1 and gid == sid and s_cur >= s_goal - 1e-9:
        goal = (float(remaining_points[-1][0]), float(remaining_points[-1][1]))
        return RoutePlan((sid,), (pos, pos), goal, pos)
    return build_route(m, [pos, *remaining_points])


class _Piecewise:
    """Fast evaluation of a scipy cubic spline with all derivatives from one interval lookup."""

    def __init__(self, spline):
        self.x = spline.x
        self.c = spline.c  # (4, n): highest power first

    def eval(self, u, orders=(0,)):
        u = np.asarray(u, dtype=float)
        i = np.clip(np.searchsorted(self.x, u, side="right") - 1, 0, len(self.x) - 2)
        h = u - self.x[i]
        c3, c2, c1, c0 = self.c[0, i], self.c[1, i], self.c[2, i], self.c[3, i]
        out = []
        for k in orders:
            if k == 0:
                out.append(((c3 * h + c2) * h + c1) * h + c0)
            elif k == 1:
                out.append((3.0 * c3 * h + 2.0 * c2) * h + c1)
            elif k == 2:
                out.append(6.0 * c3 * h + 2.0 * c2)
            else:
                out.append(6.0 * c3 + 0.0 * h)
        return out

    def eval1(self, u: float) -> tuple[float, float, float, float]:
        """Value and first three derivatives at a scalar ``u``."""
        x = self.x
        i = min(max(bisect.bisect_right(x, u) - 1, 0), len(x) - 2)
        h = u - float(x[i])
        c3, c2, c1, c0 = (float(v) for v in self.c[:, i])
        return ((c3 * h + c2) * h + c1) * h + c0, (3.0 * c3 * h + 2.0 * c2) * h + c1, 6.0 * c3 * h + 2.0 * c2, 6.0 * c3


class ReferencePath:
    """Cubic spline through path points, reparameterized by arc length.

    ``s`` runs from 0 to :attr:`length`; ``origin_s`` is where ``s = 0`` sits on
    the global path the points came from.
    """

    def __init__(self, points, origin_s: float = 0.0):
        pts = np.asarray(points, dtype=float)
        keep = [0]
        for i in range(1, len(pts)):
            if np.hypot(*(pts[i] - pts[keep[-1]])) > _MIN_POINT_SPACING:
                keep.append(i)
        pts = pts[keep]
        if len(pts) < 2:
            raise ProjectionError("reference path needs at least two distinct points")
        u = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(pts, axis=0).T))])
        bc = "not-a-knot" if len(pts) > 3 else "natural"
        self._cx = CubicSpline(u, pts[:, 0], bc_type=bc)
        self._cy = CubicSpline(u, pts[:, 1], bc_type=bc)
        self.points = pts
        self.origin_s = float(origin_s)

        # arc length by 5-point Gauss-Legendre on a grid of at most ARC_SAMPLE_STEP
        n = max(2, int(math.ceil(u[-1] / ARC_SAMPLE_STEP)) + 1)
        ug = np.linspace(0.0, u[-1], n)
        gx, gw = np.polynomial.legendre.leggauss(5)
        half = 0.5 * np.diff(ug)
        mid = 0.5 * (ug[1:] + ug[:-1])
        nodes = mid[:, None] + half[:, None] * gx[None, :]
        speed = np.hypot(self._cx(nodes, 1), self._cy(nodes, 1))
        seg = half * (speed @ gw)
        sg = np.concatenate([[0.0], np.cumsum(seg)])
        self._u_of_s = CubicSpline(sg, ug)
        self._px, self._py, self._pu = _Piecewise(self._cx), _Piecewise(self._cy), _Piecewise(self._u_of_s)
        self.length = float(sg[-1])
        self._grid_s = sg
        self._grid_xy = np.column_stack([self._cx(ug), self._cy(ug)])
        self._tree = cKDTree(self._grid_xy)

    # geometry ---------------------------------------------------------------
    def _u(self, s):
        return self._pu.eval(np.clip(s, 0.0, self.length))[0]

    def point(self, s):
        u = self._u(s)
        return np.stack([self._px.eval(u)[0], self._py.eval(u)[0]], axis=-1)

    def frame(self, s):
        """Point, unit tangent, heading, curvature and d(curvature)/ds at ``s``."""
        u = self._u(s)
        x0, x1, x2, x3 = self._px.eval(u, (0, 1, 2, 3))
        y0, y1, y2, y3 = self._py.eval(u, (0, 1, 2, 3))
        sp = np.hypot(x1, y1)
        cross = x1 * y2 - y1 * x2
        kappa = cross / sp**3
        dkappa_du = (x1 * y3 - y1 * x3) / sp**3 - 3.0 * cross * (x1 * x2 + y1 * y2) / sp**5
        pt = np.stack([x0, y0], axis=-1)
        tangent = np.stack([x1 / sp, y1 / sp], axis=-1)
        return pt, tangent, np.arctan2(y1, x1), kappa, dkappa_du / sp

    def frame1(self, s: float):
        """Scalar :meth:`frame`: (x, y, tx, ty, heading, curvature, dcurvature/ds)."""
        u = self._pu.eval1(min(max(float(s), 0.0), self.length))[0]
        x0, x1, x2, x3 = self._px.eval1(u)
        y0, y1, y2, y3 = self._py.eval1(u)
        sp = math.hypot(x1, y1)
        cross = x1 * y2 - y1 * x2
        kappa = cross / sp**3
        dkappa_du = (x1 * y3 - y1 * x3) / sp**3 - 3.0 * cross * (x1 * x2 + y1 * y2) / sp**5
        return x0, y0, x1 / sp, y1 / sp, math.atan2(y1, x1), kappa, dkappa_du / sp

    def project1(self, x: float, y: float, iterations: int = 6) -> tuple[float, float]:
        """Scalar :meth:`project`."""
        _, idx = self._tree.query((x, y))
        s = float(self._grid_s[idx])
        for _ in range(iterations):
            px, py, tx, ty, _, k, _ = self.frame1(s)
            dx, dy = x - px, y - py
            d = tx * dy - ty * dx
            denom = 1.0 - k * d
            if abs(denom) < 1e-6:
                denom = 1e-6
            step = (dx * tx + dy * ty) / denom
            s = min(max(s + step, 0.0), self.length)
            if abs(step) < 1e-12:
                break
        px, py, tx, ty, _, _, _ = self.frame1(s)
        return s, tx * (y - py) - ty * (x - px)

    def tangent(self, s):
        return self.frame(s)[1]

    def normal(self, s):
        t = self.tangent(s)
        return np.stack([-t[..., 1], t[..., 0]], axis=-1)

    def heading(self, s):
        return self.frame(s)[2]

    def curvature(self, s):
        return self.frame(s)[3]

    def project(self, xy, iterations: int = 6):
        """Arc length and signed lateral offset of the closest path point(s)."""
        p = np.atleast_2d(np.asarray(xy, dtype=float))
        _, idx = self._tree.query(p)
        s = self._grid_s[idx].copy()
        for _ in range(iterations):
            pt, t, _, k, _ = self.frame(s)
            diff = p - pt
            along = np.einsum("ij,ij->i", diff, t)
            d = t[:, 0] * diff[:, 1] - t[:, 1] * diff[:, 0]
            denom = 1.0 - k * d
            denom = np.where(np.abs(denom) < 1e-6, 1e-6, denom)
            step = along / denom
            s = np.clip(s + step, 0.0, self.length)
            if np.max(np.abs(step)) < 1e-12:
                break
        pt, t, _, k, _ = self.frame(s)
        diff = p - pt
        d = t[:, 0] * diff[:, 1] - t[:, 1] * diff[:, 0]
        if np.ndim(xy) == 1:
            return float(s[0]), float(d[0])
        return s, d

    def max_deviation(self, points) -> float:
        """Largest perpendicular distance from ``points`` to the spline."""
        pts = np.asarray(points, dtype=float)
        s, d = self.project(pts)
        return float(np.max(np.abs(np.hypot(*(self.point(s) - pts).T))))


def fit_reference_path(route: RoutePlan, position: Sequence[float], window: float = DEFAULT_WINDOW) -> ReferencePath:
    """Fit the reference path on the stretch of ``route`` centered on ``position``."""
    pts = route.path_array
    if len(pts) < 2 or route.length < 1e-6:
        raise ProjectionError("route has no path to fit")
    s_proj, dist, _ = _polyline_project(pts, np.asarray(position, dtype=float))
    if dist > window:
        raise ProjectionError(f"position is {dist:.2f} m from the route path (window {window:.1f} m)")
    total = route.length
    lo, hi = max(0.0, s_proj - window / 2.0), min(total, s_proj + window / 2.0)
    piece = _polyline_slice(pts, lo, hi)
    return ReferencePath(piece, origin_s=lo)


def straight_centerline(start, end, step: float = 1.0) -> list[tuple[float, float]]:
    """Evenly spaced points on a straight segment, for building fixtures."""
    a, b = np.asarray(start, float), np.asarray(end, float)
    n = max(1, int(math.ceil(np.hypot(*(b - a)) / step)))
    return [tuple(map(float, a + (b - a) * i / n)) for i in range(n + 1)]


def arc_centerline(center, radius: float, start_angle: float, end_angle: float, step: float = 1.0):
    n = max(2, int(math.ceil(abs(end_angle - start_angle) * radius / step)))
    angs = np.linspace(start_angle, end_angle, n + 1)
    return [(float(center[0] + radius * math.cos(a)), float(center[1] + radius * math.sin(a))) for a in angs]
