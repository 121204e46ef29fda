"""Target finding: sampled terminal states for each maneuver."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from sdvsim.frenet import FrenetState
from sdvsim.params import Range, center, sample_values
from sdvsim.planner.config import ManeuverConfig
from sdvsim.traffic import Actor, TrafficSnapshot

FOLLOW_LOOKAHEAD = 150.0  # m
STOPPED_LEAD = 0.5  # m/s


class TargetError(ValueError):
    """A maneuver refers to a vehicle that is not in the snapshot."""


@dataclass(frozen=True)
class TargetState:
    state: FrenetState
    T: float
    lane_center: float = 0.0
    sample: dict = field(default_factory=dict)  # sampled parameter values, for diagnostics


def _values(v, n: int, rng) -> np.ndarray:
    if isinstance(v, Range) and v.hi - v.lo < 1e-12:
        return np.array([v.center])
    return sample_values(v, n, rng)


def _predict(actor: Actor, t: float) -> tuple[float, float, float, float]:
    """(s, s_dot, d, d_dot) ``t`` seconds after the snapshot."""
    if actor.prediction is not None:
        return actor.prediction.at(t)
    st = actor.state
    return st.s + st.s_dot * t, st.s_dot, st.d + st.d_dot * t, st.d_dot


def horizon_values(config: ManeuverConfig, rng=None) -> np.ndarray:
    return _values(config.horizon, config.horizon_samples, rng if config.sampling == "random" else None)


def target_actor(config: ManeuverConfig, snapshot: TrafficSnapshot) -> Optional[Actor]:
    if config.maneuver == "merge_in_front":
        target = snapshot.ego_id if config.target in (None, "ego") else config.target
        actor = snapshot.actor(target)
        if actor is None:
            raise TargetError(f"target vehicle {target!r} not in traffic snapshot")
        return actor
    if config.maneuver == "vehicle_following":
        if config.target is not None:
            actor = snapshot.actor(config.target)
            if actor is None:
                raise TargetError(f"target vehicle {config.target!r} not in traffic snapshot")
            return actor
        return snapshot.lead_vehicle(FOLLOW_LOOKAHEAD)
    return None


def target_lane(config: ManeuverConfig, snapshot: TrafficSnapshot, actor: Optional[Actor] = None) -> int:
    if config.target_lane is not None:
        lane = int(config.target_lane)
    elif config.maneuver == "merge_in_front" and actor is not None:
        lane = snapshot.lane_index(actor.state.d)
    else:
        lane = snapshot.own_lane + int(config.target_lane_id)
    if not snapshot.has_lane(lane):
        raise TargetError(f"target lane {lane} does not exist (lanes {-snapshot.lanes_right}..{snapshot.lanes_left})")
    return lane


def stop_position(config: ManeuverConfig, snapshot: TrafficSnapshot) -> float:
    if config.stop_point is not None:
        return float(config.stop_point)
    if config.stop_at == "stop_line":
        nxt = snapshot.next_stop_line()
        if nxt is not None:
            return nxt[0]
    if snapshot.goal_s is not None:
        return snapshot.goal_s
    return snapshot.state.s  # nothing to stop at: stop where we are


def reference_speed(config: ManeuverConfig, snapshot: TrafficSnapshot) -> float:
    """Nominal desired average speed, used by the efficiency cost."""
    kind = config.maneuver
    if kind == "stop":
        return 0.0
    if kind == "merge_in_front":
        actor = target_actor(config, snapshot)
        return max(0.0, _predict(actor, config.time_target)[1] + center(config.delta_s[1]))
    if kind == "vehicle_following":
        lead = target_actor(config, snapshot)
        if lead is not None:
            return max(0.0, _predict(lead, config.time_target)[1])
    return abs(center(config.target_speed))


def _stop_horizon(config: ManeuverConfig, snapshot: TrafficSnapshot, distance: float, rng) -> np.ndarray:
    # constant-deceleration stopping time; far stops need longer than the default horizon
    v0 = max(snapshot.state.s_dot, 0.0)
    t_star = 2.0 * distance / v0 if v0 > 0.1 else config.horizon.hi
    if t_star <= config.horizon.hi:
        return horizon_values(config, rng)
    rng_t = Range.between(min(0.9 * t_star, 10.0), min(1.2 * t_star, 10.0))
    return _values(rng_t, config.horizon_samples, None)


def find_targets(config: ManeuverConfig, snapshot: TrafficSnapshot, rng=None) -> list[TargetState]:
    """Cartesian product of sampled target parameters and horizons, in deterministic order."""
    kind = config.maneuver
    st = snapshot.state
    n = config.samples_per_param
    prng = rng if config.sampling == "random" else None
    actor = target_actor(config, snapshot)
    lane = target_lane(config, snapshot, actor) if kind in ("lane_swerve", "merge_in_front") or config.target_lane is not None else snapshot.own_lane
    lane_c = snapshot.lane_center(lane)
    offsets = _values(config.lateral_offset, n, prng)
    out: list[TargetState] = []

    def emit(s, sd, sdd, d, T, **sample):
        out.append(TargetState(FrenetState(float(s), float(sd), float(sdd), float(d), 0.0, 0.0), float(T), lane_c, sample))

    if kind in ("velocity_keeping", "lane_swerve", "reverse") or (kind == "vehicle_following" and actor is None):
        speeds = _values(config.target_speed, n, prng)
        if kind == "reverse":
            speeds = -np.abs(speeds)
        for v, off, T in itertools.product(speeds, offsets, horizon_values(config, rng)):
            emit(st.s + 0.5 * T * (st.s_dot + v), v, 0.0, lane_c + off, T, target_speed=v, lateral_offset=off)
    elif kind == "vehicle_following":
        half = 0.5 * (actor.length + snapshot.length)
        horizons = horizon_values(config, rng)
        if _predict(actor, config.horizon.hi)[1] < STOPPED_LEAD:
            # closing on a standstill: same horizon stretch as a stop
            horizons = _stop_horizon(config, snapshot, max(actor.state.s - half - config.min_gap - st.s, 0.0), rng)
        for g, off, T in itertools.product(_values(config.time_gap, n, prng), offsets, horizons):
            ls, lv, _, _ = _predict(actor, T)
            lv = max(lv, 0.0)
            gap = max(config.min_gap, g * lv)
            emit(ls - half - gap, lv, 0.0, lane_c + off, T, time_gap=g, lateral_offset=off)
    elif kind == "merge_in_front":
        half = 0.5 * (actor.length + snapshot.length)
        ds = tuple(config.delta_s) + (0.0,) * (3 - len(config.delta_s))
        grids = [_values(x, n, prng) for x in ds]
        for dd, dv, da, off, T in itertools.product(*grids, offsets, horizon_values(config, rng)):
            ts, tv, _, _ = _predict(actor, T)
            emit(ts + half + dd, tv + dv, da, lane_c + off, T, delta_d=dd, delta_v=dv, delta_a=da, lateral_offset=off)
    elif kind == "stop":
        stop = stop_position(config, snapshot)
        for m, off in itertools.product(_values(config.stop_margin, n, prng), offsets):
            s_target = max(stop - m, st.s)
            for T in _stop_horizon(config, snapshot, s_target - st.s, rng):
                emit(s_target, 0.0, 0.0, lane_c + off, T, stop_margin=m, lateral_offset=off)
    else:  # pragma: no cover - config validation rejects other names
        raise TargetError(f"no target semantics for {kind!r}")
    return out
