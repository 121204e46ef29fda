"""Candidate generation, feasibility filtering and cost ranking."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from sdvsim.frenet import FrenetState, FrenetTrajectory, QuinticPoly, jerk_cost, solve_quintic, squared_integral
from sdvsim.planner.config import COST_NAMES, Limits, ManeuverConfig
from sdvsim.planner.targets import TargetState, find_targets, reference_speed
from sdvsim.traffic import Actor, TrafficSnapshot

CHECK_DT = 0.1  # s
DISK_SCALE = 1.2
PROXIMITY_SIGMA = 2.0  # m
INVERSION_TOL = 1e-3  # m/s
LIMIT_TOL = 1e-6


class PlanningError(ValueError):
    pass


@dataclass(frozen=True)
class Feasibility:
    feasible: bool
    violation: Optional[str] = None
    actor: Optional[int] = None
    time: Optional[float] = None  # s after the trajectory start

    def __bool__(self) -> bool:
        return self.feasible


@dataclass(frozen=True)
class RankedCandidate:
    index: int
    trajectory: FrenetTrajectory
    target: Optional[TargetState]
    feasible: bool
    violation: Optional[str]
    cost: float
    cost_breakdown: dict = field(default_factory=dict)
    actor: Optional[int] = None


@dataclass(frozen=True)
class PlanResult:
    best: Optional[RankedCandidate]
    ranking: tuple[RankedCandidate, ...]

    @property
    def trajectory(self) -> Optional[FrenetTrajectory]:
        return self.best.trajectory if self.best else None


def generate_candidates(start: FrenetState, targets: Sequence[TargetState], t0: float = 0.0) -> list[FrenetTrajectory]:
    """One quintic pair per target, in target order."""
    out = []
    for tg in targets:
        e = tg.state
        out.append(
            FrenetTrajectory(
                solve_quintic(start.lon, e.lon, tg.T),
                solve_quintic(start.lat, e.lat, tg.T),
                tg.T,
                t0,
            )
        )
    return out


def sample_times(traj: FrenetTrajectory, dt: float = CHECK_DT) -> np.ndarray:
    """Relative sample times 0, dt, ..., always including T."""
    n = int(math.floor(traj.T / dt + 1e-9))
    t = np.arange(n + 1) * dt
    if traj.T - t[-1] > 1e-9:
        t = np.append(t, traj.T)
    return t


def disk_centers(s, d, heading, length: float):
    """Centers (..., 3, 2) of the three covering disks along a footprint."""
    offs = np.array([-length / 3.0, 0.0, length / 3.0])
    c, sn = np.cos(heading)[..., None], np.sin(heading)[..., None]
    return np.stack([np.asarray(s)[..., None] + offs * c, np.asarray(d)[..., None] + offs * sn], axis=-1)


def disk_radius(width: float) -> float:
    return DISK_SCALE * width / 2.0


def footprint_gap(own_c, own_r, other_c, other_r) -> np.ndarray:
    """Per-sample clearance between two disk sets; negative means overlap."""
    diff = own_c[:, :, None, :] - other_c[:, None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    return dist.reshape(len(own_c), -1).min(axis=1) - own_r - other_r


@dataclass
class _Samples:
    t: np.ndarray
    s: np.ndarray
    sd: np.ndarray
    sdd: np.ndarray
    sddd: np.ndarray
    d: np.ndarray
    dd: np.ndarray
    ddd: np.ndarray
    dddd: np.ndarray
    heading: np.ndarray


def _sample(traj: FrenetTrajectory, dt: float = CHECK_DT) -> _Samples:
    t = sample_times(traj, dt)
    s, sd, sdd, sddd = (traj.s_poly.eval(t, k) for k in range(4))
    d, dd, ddd, dddd = (traj.d_poly.eval(t, k) for k in range(4))
    speed = np.hypot(sd, dd)
    heading = np.where(speed > 1e-3, np.arctan2(dd, np.where(np.abs(sd) > 1e-9, np.abs(sd), 1e-9)), 0.0)
    return _Samples(t, s, sd, sdd, sddd, d, dd, ddd, dddd, heading)


def _actor_tracks(traj: FrenetTrajectory, snapshot: TrafficSnapshot, rel_t: np.ndarray, skip: set):
    for a in snapshot.actors:
        if a.id in skip:
            continue
        if a.prediction is not None:
            s, d, h = a.prediction.sample(rel_t)
        else:
            s = a.state.s + a.state.s_dot * rel_t
            d = a.state.d + a.state.d_dot * rel_t
            h = np.full_like(rel_t, a.heading)
        yield a, disk_centers(s, d, h, a.length)


def check_feasibility(
    traj: FrenetTrajectory,
    snapshot: TrafficSnapshot,
    limits: Limits = Limits(),
    lane_bounds: Optional[tuple[float, float]] = None,
    config: Optional[ManeuverConfig] = None,
    _samples: Optional[_Samples] = None,
) -> Feasibility:
    """Check in order: direction inversion, acceleration, jerk, lane departure, collision."""
    smp = _samples or _sample(traj)
    reverse = config is not None and config.maneuver == "reverse"
    if not reverse:
        bad = np.nonzero(smp.sd < -INVERSION_TOL)[0]
        if len(bad):
            return Feasibility(False, "direction inversion", time=float(smp.t[bad[0]]))
    for arr, lim, name in (
        (smp.sdd, limits.max_accel_lon, "longitudinal acceleration"),
        (smp.ddd, limits.max_accel_lat, "lateral acceleration"),
        (smp.sddd, limits.max_jerk_lon, "longitudinal jerk"),
        (smp.dddd, limits.max_jerk_lat, "lateral jerk"),
    ):
        bad = np.nonzero(np.abs(arr) > lim + LIMIT_TOL)[0]
        if len(bad):
            return Feasibility(False, f"{name} limit", time=float(smp.t[bad[0]]))
    lo, hi = lane_bounds if lane_bounds is not None else snapshot.road_bounds
    hl, hw = snapshot.length / 2.0, snapshot.width / 2.0
    ext = np.abs(hl * np.sin(smp.heading)) + np.abs(hw * np.cos(smp.heading))
    bad = np.nonzero((smp.d - ext < lo - 1e-9) | (smp.d + ext > hi + 1e-9))[0]
    if len(bad):
        return Feasibility(False, "lane departure", time=float(smp.t[bad[0]]))
    if config is None or config.collision_check:
        skip = set()
        if config is not None and config.ignore_target_collision:
            skip.add(snapshot.ego_id if config.target in (None, "ego") else config.target)
        # a follower in our lane keeps its own distance
        lane = snapshot.own_lane
        for a in snapshot.actors:
            if snapshot.in_lane(a, lane) and a.state.s + 0.5 * (a.length + snapshot.length) <= snapshot.state.s:
                skip.add(a.id)
        own = disk_centers(smp.s, smp.d, smp.heading, snapshot.length)
        rel_t = smp.t + (traj.t0 - snapshot.timestamp)
        r_own = disk_radius(snapshot.width)
        for actor, other in _actor_tracks(traj, snapshot, rel_t, skip):
            gap = footprint_gap(own, r_own, other, disk_radius(actor.width))
            bad = np.nonzero(gap < 0.0)[0]
            if len(bad):
                return Feasibility(False, "collision", actor=actor.id, time=float(smp.t[bad[0]]))
    return Feasibility(True)


def cost_components(
    traj: FrenetTrajectory,
    snapshot: TrafficSnapshot,
    config: ManeuverConfig,
    lane_center: float,
    v_ref: float,
    _samples: Optional[_Samples] = None,
) -> dict:
    smp = _samples or _sample(traj)
    T, lim = traj.T, config.limits
    t_target = config.time_target
    v_bar = (float(smp.s[-1]) - float(smp.s[0])) / T
    efficiency = max(0.0, 1.0 - abs(v_bar) / v_ref) if v_ref > 1e-9 else 0.0
    half_w = snapshot.lane_width / 2.0
    lane = float(np.mean((smp.d - lane_center) ** 2)) / half_w**2
    jerk = jerk_cost(traj.s_poly, T) / (T * lim.max_jerk_lon**2) + jerk_cost(traj.d_poly, T) / (T * lim.max_jerk_lat**2)
    accel = squared_integral(traj.s_poly, T, 2) / (T * lim.max_accel_lon**2) + squared_integral(traj.d_poly, T, 2) / (
        T * lim.max_accel_lat**2
    )
    prox = 0.0
    if snapshot.actors:
        own = disk_centers(smp.s, smp.d, smp.heading, snapshot.length)
        rel_t = smp.t + (traj.t0 - snapshot.timestamp)
        r_own = disk_radius(snapshot.width)
        for actor, other in _actor_tracks(traj, snapshot, rel_t, set()):
            gap = np.maximum(footprint_gap(own, r_own, other, disk_radius(actor.width)), 0.0)
            prox += config.proximity_multiplier(actor.id) * float(np.sum(np.exp(-gap / PROXIMITY_SIGMA)))
    return {
        "time": ((T - t_target) / t_target) ** 2,
        "efficiency": efficiency,
        "lane_offset": lane,
        "jerk": jerk,
        "acceleration": accel,
        "proximity": prox,
    }


def rank_and_select(
    candidates: Sequence[FrenetTrajectory],
    snapshot: TrafficSnapshot,
    config: ManeuverConfig,
    targets: Optional[Sequence[TargetState]] = None,
    lane_bounds: Optional[tuple[float, float]] = None,
) -> PlanResult:
    """Weighted-cost ranking; the cheapest feasible candidate wins, ties to the lowest index."""
    if not candidates:
        raise PlanningError("no candidates to rank")
    v_ref = reference_speed(config, snapshot)
    weights = np.asarray(config.cost_weights, float)
    ranking = []
    best_i, best_cost = None, math.inf
    for i, traj in enumerate(candidates):
        tg = targets[i] if targets is not None else None
        smp = _sample(traj)
        feas = check_feasibility(traj, snapshot, config.limits, lane_bounds, config, smp)
        lane_c = tg.lane_center if tg is not None else snapshot.lane_center(snapshot.own_lane)
        comps = cost_components(traj, snapshot, config, lane_c, v_ref, smp)
        total = float(weights @ np.array([comps[n] for n in COST_NAMES]))
        ranking.append(RankedCandidate(i, traj, tg, feas.feasible, feas.violation, total, comps, feas.actor))
        if feas.feasible and total < best_cost:
            best_i, best_cost = i, total
    return PlanResult(ranking[best_i] if best_i is not None else None, tuple(ranking))


def plan(config: ManeuverConfig, snapshot: TrafficSnapshot, rng=None, lane_bounds=None) -> PlanResult:
    """Targets, candidates, feasibility and ranking for one decision.

    Candidates start at the snapshot's own state with ``t0`` at the snapshot time.
    An empty target set yields a result with no best candidate.
    """
    targets = find_targets(config, snapshot, rng)
    if not targets:
        return PlanResult(None, ())
    cands = generate_candidates(snapshot.state, targets, snapshot.timestamp)
    return rank_and_select(cands, snapshot, config, targets, lane_bounds)


def fallback_stop(state: FrenetState, decel: float, t0: float = 0.0) -> FrenetTrajectory:
    """Constant-deceleration stop from ``state``; lateral motion settles over the same time."""
    if decel <= 0:
        raise PlanningError("fallback deceleration must be positive")
    v0 = max(state.s_dot, 0.0)
    T = max(v0 / decel, 1e-3)
    s_poly = QuinticPoly((state.s, v0, -0.5 * decel if v0 > 0 else 0.0, 0.0, 0.0, 0.0))
    if T >= 0.5:
        d_poly = solve_quintic(state.lat, (state.d + 0.5 * state.d_dot * T, 0.0, 0.0), T)
    else:
        d_poly = QuinticPoly((state.d, 0.0, 0.0, 0.0, 0.0, 0.0))
    return FrenetTrajectory(s_poly, d_poly, T, t0)


def dump_candidates(result: PlanResult, vehicle_id=None, sim_time: Optional[float] = None) -> str:
    """One JSON record per candidate, with its cost breakdown."""
    lines = []
    for rc in result.ranking:
        end = rc.trajectory.state_at(rc.trajectory.t_end)
        rec = {
            "sim_time": None if sim_time is None else round(sim_time, 6),
            "vehicle": vehicle_id,
            "index": rc.index,
            "T": round(rc.trajectory.T, 6),
            "end": [round(x, 6) for x in end.as_tuple()],
            "feasible": rc.feasible,
            "violation": rc.violation,
            "actor": rc.actor,
            "cost": round(rc.cost, 9),
            "selected": result.best is not None and rc.index == result.best.index,
            **{f"c_{k}": round(v, 9) for k, v in rc.cost_breakdown.items()},
        }
        lines.append(json.dumps(rec, sort_keys=True))
    return "\n".join(lines) + ("\n" if lines else "")

