"""Trajectory similarity, driver-style extraction and calibration, run summaries."""

from __future__ import annotations

import csv
import statistics
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid

from sdvsim.params import Range
from sdvsim.planner.config import ManeuverConfig
from sdvsim.world_map import Map, RouteError, _polyline_project, build_route

STOP_SPEED = 0.1  # m/s
MOVING_SPEED = 0.5  # m/s
FOLLOW_MIN_SPEED = 1.0  # m/s, slower samples are left out of time-gap estimates
DEFAULT_TIME_GAP = (1.8, 2.2)  # s


class MappingError(ValueError):
    """A trace does not lie on the map."""


@dataclass(frozen=True)
class Trace:
    id: int
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    theta: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(self.t)
        if any(len(a) != n for a in (self.x, self.y, self.v)):
            raise ValueError("trace columns differ in length")
        if n == 0:
            raise ValueError("empty trace")
        if n > 1 and np.any(np.diff(self.t) <= 0):
            raise ValueError(f"trace {self.id}: times must be strictly increasing")
        if not all(np.all(np.isfinite(a)) for a in (self.t, self.x, self.y, self.v)):
            raise ValueError(f"trace {self.id}: non-finite values")

    @classmethod
    def from_arrays(cls, vid, t, x, y, v=None, theta=None) -> "Trace":
        t, x, y = (np.asarray(a, dtype=float) for a in (t, x, y))
        if v is None:
            v = np.hypot(np.gradient(x, t), np.gradient(y, t)) if len(t) > 1 else np.zeros_like(t)
        return cls(vid, t, x, y, np.asarray(v, dtype=float), None if theta is None else np.asarray(theta, dtype=float))

    @property
    def xy(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])

    def position(self, times) -> np.ndarray:
        return np.column_stack([np.interp(times, self.t, self.x), np.interp(times, self.t, self.y)])

    def translated(self, dx: float, dy: float) -> "Trace":
        return replace(self, x=self.x + dx, y=self.y + dy)


def read_trace_rows(path) -> list[dict]:
    """Rows of a trace file as dicts with keys id, t, x, y, v, a, theta, s, d."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(
                {
                    "id": int(row["id"]),
                    "t": float(row["sim_time"]),
                    **{k: float(row[k]) for k in ("x", "y", "v", "a", "theta", "s", "d") if k in row},
                }
            )
    return out


def read_traces(path) -> dict[int, Trace]:
    rows = read_trace_rows(path)
    by_id: dict[int, list] = {}
    for r in rows:
        by_id.setdefault(r["id"], []).append(r)
    return {
        vid: Trace.from_arrays(vid, [r["t"] for r in rs], [r["x"] for r in rs], [r["y"] for r in rs], [r["v"] for r in rs], [r.get("theta", 0.0) for r in rs])
        for vid, rs in sorted(by_id.items())
    }


def traces_from_result(result) -> dict[int, Trace]:
    """Traces of a simulation result, rounded like the trace file."""
    out = {}
    for vid, rows in sorted(result.traces.items()):
        arr = np.round(np.asarray(rows, dtype=float), 6)
        out[vid] = Trace(vid, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 5])
    return out


def sted(a: Trace, b: Trace) -> float:
    """Time-averaged Euclidean distance between two traces over their common time span.

    Both traces are linearly interpolated onto the union of their sample times
    inside the overlap and the distance is integrated with the trapezoidal rule.
    """
    lo, hi = max(a.t[0], b.t[0]), min(a.t[-1], b.t[-1])
    if not hi > lo:
        raise ValueError("traces do not overlap in time")
    grid = np.union1d(a.t[(a.t >= lo) & (a.t <= hi)], b.t[(b.t >= lo) & (b.t <= hi)])
    grid = np.union1d(grid, [lo, hi])
    dist = np.hypot(*(a.position(grid) - b.position(grid)).T)
    return float(trapezoid(dist, grid) / (hi - lo))


# ---------------------------------------------------------------------------
# driver style


@dataclass(frozen=True)
class DriverStyleConfig:
    max_speed: float  # m/s
    avg_speed: float  # m/s
    lateral_offset: float = 0.0  # m, left positive
    stop_distance_to_line: Optional[float] = None  # m
    resume_delay: Optional[float] = None  # s
    time_gap: tuple[float, float] = DEFAULT_TIME_GAP  # s

    def __post_init__(self):
        if self.max_speed < 0 or self.avg_speed < 0:
            raise ValueError("speeds must be non-negative")
        if self.time_gap[0] > self.time_gap[1]:
            raise ValueError("time_gap lower bound exceeds upper bound")


def _route_coords(trace: Trace, m: Map):
    """Arc length along the trace's route and signed offset from its centerline."""
    try:
        route = build_route(m, [tuple(trace.xy[0]), tuple(trace.xy[-1])])
    except RouteError as exc:
        raise MappingError(str(exc)) from None
    pts = route.path_array
    s = np.empty(len(trace.t))
    d = np.empty(len(trace.t))
    for i, p in enumerate(trace.xy):
        s[i], dist, d[i] = _polyline_project(pts, p)
        if dist > 3.5:
            raise MappingError(f"trace {trace.id} leaves the map at t = {trace.t[i]:.3f}")
    return route, s, d


def _green_onsets(signal) -> list[float]:
    return [float(t) for t, phase in signal if phase == "green"]


def extract_style(
    empirical: Trace,
    m: Map,
    lead: Optional[Trace] = None,
    signal: Optional[Sequence] = None,
    length: float = 4.5,
    lead_length: float = 4.5,
) -> DriverStyleConfig:
    """Rule-based style parameters of an observed trajectory.

    ``signal`` is the phase schedule ``[(t, phase), ...]`` governing the stop
    line the vehicle meets, if any.
    """
    route, s, d = _route_coords(empirical, m)
    v = empirical.v
    max_speed = float(v.max())
    span = empirical.t[-1] - empirical.t[0]
    avg_speed = float(trapezoid(v, empirical.t) / span) if span > 0 else float(v[0])
    moving = v > MOVING_SPEED
    offset = float(np.mean(d[moving])) if np.any(moving) else float(np.mean(d))

    stop_distance = None
    resume = None
    stopped = np.nonzero(v < STOP_SPEED)[0]
    if len(stopped) and np.any(v[: stopped[0] + 1] > MOVING_SPEED):
        i_stop = int(stopped[0])
        lines = []
        for sid in dict.fromkeys(route.segment_ids):
            seg = m.segments[sid]
            if seg.stop_line is not None:
                sl, dist, _ = _polyline_project(route.path_array, np.asarray(seg.stop_line))
                if dist < seg.width:
                    lines.append(sl)
        ahead = [sl for sl in lines if sl >= s[i_stop] - 0.5]
        if ahead:
            stop_distance = float(min(ahead) - s[i_stop])
        if signal:
            greens = [g for g in _green_onsets(signal) if g >= empirical.t[i_stop] - 1e-9]
            if greens:
                go = np.nonzero((empirical.t >= greens[0]) & (v > MOVING_SPEED))[0]
                if len(go):
                    resume = float(empirical.t[go[0]] - greens[0])

    time_gap = DEFAULT_TIME_GAP
    if lead is not None:
        lo, hi = max(lead.t[0], empirical.t[0]), min(lead.t[-1], empirical.t[-1])
        sel = (empirical.t >= lo) & (empirical.t <= hi) & (v > FOLLOW_MIN_SPEED)
        if np.any(sel):
            lead_pos = lead.position(empirical.t[sel])
            gap = np.hypot(*(lead_pos - empirical.xy[sel]).T) - 0.5 * (length + lead_length)
            tg = gap / v[sel]
            time_gap = (float(np.percentile(tg, 10)), float(np.percentile(tg, 90)))
    return DriverStyleConfig(max_speed, avg_speed, offset, stop_distance, resume, time_gap)




def style_speed_range(style: DriverStyleConfig) -> Range:
    """Centered at the average speed, reaching up to the maximum.

    The efficiency cost drives vehicles toward the top of the range, so the top
    must match the observed maximum rather than a fixed spread.
    """
    hi = max(style.max_speed, style.avg_speed)
    return Range(max(0.0, 2.0 * style.avg_speed - hi), hi, style.avg_speed)


def style_overrides(style: DriverStyleConfig) -> dict:
    """Maneuver configuration keys set from a style."""
    out = {
        "target_speed": style_speed_range(style),
        "lateral_offset": style.lateral_offset,
        "time_gap": Range.between(*style.time_gap),
    }
    if style.stop_distance_to_line is not None:
        out["stop_margin"] = max(0.0, style.stop_distance_to_line)
    if style.resume_delay is not None:
        out["resume_delay"] = max(0.0, style.resume_delay)
    return out


def apply_style(style: DriverStyleConfig, base: Mapping[str, ManeuverConfig]) -> dict[str, ManeuverConfig]:
    """Copy of ``base`` (maneuver name to config) with the style's parameters overridden."""
    over = style_overrides(style)
    return {name: replace(cfg, **over) for name, cfg in base.items()}


# ---------------------------------------------------------------------------
# summaries


def _stats(xs: Sequence[float]) -> dict:
    return {"n": len(xs), "mean": float(statistics.fmean(xs)), "median": float(statistics.median(xs))} if xs else {"n": 0}


def report(results: Iterable[Mapping]) -> dict:
    """Aggregate per-run records by scenario type.

    Each record may carry ``type``, ``sted``, ``trc``, ``tprc``, ``max_tick``,
    ``max_plan``, ``irl`` and ``vehicles``. Returns per-type statistics plus
    columnar data for plotting and a compliance table when timing is present.
    """
    results = list(results)
    if not results:
        return {}
    by_type: dict[str, list] = {}
    for r in results:
        by_type.setdefault(str(r.get("type", "all")), []).append(r)
    summary: dict = {"types": {}, "columns": {"type": [], "sted": []}}
    for typ, rs in sorted(by_type.items()):
        entry = {}
        for key in ("sted", "trc", "tprc", "irl"):
            xs = [float(r[key]) for r in rs if r.get(key) is not None]
            if xs:
                entry[key] = _stats(xs)
        summary["types"][typ] = entry
        for r in rs:
            if r.get("sted") is not None:
                summary["columns"]["type"].append(typ)
                summary["columns"]["sted"].append(float(r["sted"]))
    table = [r for r in results if r.get("trc") is not None]
    if table:
        summary["compliance"] = compliance_table(table)
    return summary


COMPLIANCE_COLUMNS = ("vehicles", "obstacle", "TRC", "max_tick", "TPRC", "max_plan")


def compliance_table(rows: Iterable[Mapping]) -> dict:
    """Columnar rate-compliance table, one row per run."""
    cols = {c: [] for c in COMPLIANCE_COLUMNS}
    for r in rows:
        cols["vehicles"].append(r.get("vehicles"))
        cols["obstacle"].append(r.get("obstacle"))
        cols["TRC"].append(r.get("trc"))
        cols["max_tick"].append(r.get("max_tick"))
        cols["TPRC"].append(r.get("tprc"))
        cols["max_plan"].append(r.get("max_plan"))
    return cols


def format_table(cols: Mapping[str, list]) -> str:
    """Fixed-width text rendering of a columnar table."""
    names = list(cols)
    n = len(next(iter(cols.values()), []))

    def cell(v):
        if isinstance(v, float):
            return f"{v:.3f}"
        return "-" if v is None else str(v)

    rows = [[cell(cols[c][i]) for c in names] for i in range(n)]
    widths = [max([len(c)] + [len(r[j]) for r in rows]) for j, c in enumerate(names)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(names, widths))]
    lines += ["  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in rows]
    return "\n".join(lines)


def sted_matrix(reference: Mapping[int, Trace], others: Mapping[int, Trace]) -> dict[int, float]:
    """STED per vehicle id present in both trace sets."""
    return {vid: sted(reference[vid], others[vid]) for vid in sorted(set(reference) & set(others))}


def write_columns(cols: Mapping[str, list], path) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(cols))
        n = len(next(iter(cols.values()), []))
        for i in range(n):
            w.writerow([cols[c][i] for c in cols])
