"""Predicted traffic state as seen from one planning vehicle's Frenet frame."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from sdvsim.frenet import FrenetState
from sdvsim.world_map import ReferencePath

PREDICTION_DT = 0.1  # s


@dataclass(frozen=True)
class Prediction:
    """Sampled future of an actor in the planner's frame, ``times`` relative to the snapshot."""

    times: np.ndarray
    s: np.ndarray
    s_dot: np.ndarray
    d: np.ndarray
    d_dot: np.ndarray
    heading: np.ndarray  # relative to the path tangent

    def at(self, t: float) -> tuple[float, float, float, float]:
        """(s, s_dot, d, d_dot) at ``t``; constant velocity beyond the last sample."""
        if t <= self.times[-1]:
            return tuple(float(np.interp(t, self.times, a)) for a in (self.s, self.s_dot, self.d, self.d_dot))
        extra = t - self.times[-1]
        return (
            float(self.s[-1] + self.s_dot[-1] * extra),
            float(self.s_dot[-1]),
            float(self.d[-1] + self.d_dot[-1] * extra),
            float(self.d_dot[-1]),
        )

    def sample(self, times: np.ndarray):
        """(s, d, heading) arrays at ``times`` (relative to the snapshot)."""
        s = np.interp(times, self.times, self.s)
        d = np.interp(times, self.times, self.d)
        h = np.interp(times, self.times, self.heading)
        over = times > self.times[-1]
        if np.any(over):
            extra = times[over] - self.times[-1]
            s[over] = self.s[-1] + self.s_dot[-1] * extra
            d[over] = self.d[-1] + self.d_dot[-1] * extra
        return s, d, h

    @classmethod
    def constant(cls, state: FrenetState, horizon: float, heading: float = 0.0) -> "Prediction":
        t = np.arange(0.0, horizon + 1e-9, PREDICTION_DT)
        return cls(
            t,
            state.s + state.s_dot * t,
            np.full_like(t, state.s_dot),
            state.d + state.d_dot * t,
            np.full_like(t, state.d_dot),
            np.full_like(t, heading),
        )


@dataclass(frozen=True)
class Actor:
    id: int
    kind: str  # SDV, Ego, PDT, pedestrian, static
    state: FrenetState
    length: float = 4.5
    width: float = 1.8
    prediction: Optional[Prediction] = None
    heading: float = 0.0  # relative to the planner's path tangent


@dataclass(frozen=True)
class SignalState:
    phase: str  # green, yellow, red
    since: float  # s spent in the current phase


@dataclass(frozen=True)
class TrafficSnapshot:
    timestamp: float
    vehicle_id: int
    state: FrenetState
    path: ReferencePath
    actors: tuple[Actor, ...] = ()
    length: float = 4.5
    width: float = 1.8
    lane_width: float = 3.5
    lanes_left: int = 0
    lanes_right: int = 0
    signals: dict = field(default_factory=dict)
    goal_s: Optional[float] = None
    stop_lines: tuple[tuple[float, Optional[int]], ...] = ()
    ego_id: Optional[int] = None
    speed_limit: float = 13.9

    # lanes are parallel bands of ``lane_width`` around the reference path;
    # index 0 is the route lane, positive to the left
    def lane_index(self, d: float) -> int:
        idx = int(np.floor(d / self.lane_width + 0.5))
        return max(-self.lanes_right, min(self.lanes_left, idx))

    def lane_center(self, index: int) -> float:
        return index * self.lane_width

    @property
    def own_lane(self) -> int:
        return self.lane_index(self.state.d)

    @property
    def road_bounds(self) -> tuple[float, float]:
        w = self.lane_width
        return (-(self.lanes_right + 0.5) * w, (self.lanes_left + 0.5) * w)

    def has_lane(self, index: int) -> bool:
        return -self.lanes_right <= index <= self.lanes_left

    def actor(self, actor_id) -> Optional[Actor]:
        for a in self.actors:
            if a.id == actor_id:
                return a
        return None

    def gap_to(self, actor: Actor) -> float:
        """Bumper-to-bumper distance along S; positive when ``actor`` is ahead."""
        ds = actor.state.s - self.state.s
        half = 0.5 * (actor.length + self.length)
        return ds - half if ds >= 0 else ds + half

    def in_lane(self, actor: Actor, index: int) -> bool:
        return abs(actor.state.d - self.lane_center(index)) < 0.5 * self.lane_width

    def lead_vehicle(self, max_distance: float = 100.0, lane: Optional[int] = None) -> Optional[Actor]:
        lane = self.own_lane if lane is None else lane
        best = None
        for a in self.actors:
            if a.kind in ("pedestrian",) or not self.in_lane(a, lane):
                continue
            ds = a.state.s - self.state.s
            if 0.0 < ds <= max_distance + 0.5 * (a.length + self.length) and (best is None or ds < best[0]):
                best = (ds, a)
        return best[1] if best else None

    def next_stop_line(self, max_distance: float = 200.0) -> Optional[tuple[float, Optional[int]]]:
        best = None
        for s_line, sig in self.stop_lines:
            ds = s_line - self.state.s
            if -0.5 <= ds <= max_distance and (best is None or s_line < best[0]):
                best = (s_line, sig)
        return best
