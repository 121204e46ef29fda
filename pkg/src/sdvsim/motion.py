"""Scripted motion for predefined-trajectory agents and the Ego stub."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class Polyline:
    """Piecewise-linear path, arc-length parameterized and extended linearly past both ends."""

    def __init__(self, points: Sequence[Sequence[float]]):
        pts = np.asarray(points, dtype=float)
        keep = [0]
        for i in range(1, len(pts)):
            if np.hypot(*(pts[i] - pts[keep[-1]])) > 1e-9:
                keep.append(i)
        pts = pts[keep]
        if len(pts) < 2:
            raise ValueError("polyline needs two distinct points")
        self.points = pts
        seg = np.diff(pts, axis=0)
        self._seg_len = np.hypot(seg[:, 0], seg[:, 1])
        self._dir = seg / self._seg_len[:, None]
        self.cum = np.concatenate([[0.0], np.cumsum(self._seg_len)])
        self.length = float(self.cum[-1])

    def _index(self, s):
        return np.clip(np.searchsorted(self.cum, s, side="right") - 1, 0, len(self._seg_len) - 1)

    def at(self, s):
        """Point(s) and unit direction(s) at arc length ``s``."""
        s_arr = np.asarray(s, dtype=float)
        i = self._index(s_arr)
        pt = self.points[i] + (s_arr - self.cum[i])[..., None] * self._dir[i]
        return pt, self._dir[i]

    def project(self, p) -> tuple[float, float]:
        """Arc length and signed offset of the closest point to ``p``."""
        p = np.asarray(p, dtype=float)
        rel = p - self.points[:-1]
        u = np.clip(np.einsum("ij,ij->i", rel, self._dir), 0.0, self._seg_len)
        foot = self.points[:-1] + u[:, None] * self._dir
        dist = np.hypot(*(p - foot).T)
        i = int(np.argmin(dist))
        r = p - self.points[i]
        return float(self.cum[i] + u[i]), float(self._dir[i, 0] * r[1] - self._dir[i, 1] * r[0])


@dataclass(frozen=True)
class SpeedProfile:
    """Piecewise-linear speed over time; holds the last speed after the final breakpoint."""

    points: tuple[tuple[float, float], ...]  # (t, v), t relative to profile start

    def __post_init__(self):
        if not self.points:
            raise ValueError("empty speed profile")
        ts = [p[0] for p in self.points]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("speed profile times must be strictly increasing")
        if any(p[1] < 0 for p in self.points):
            raise ValueError("speed profile speeds must be non-negative")

    @classmethod
    def constant(cls, v: float) -> "SpeedProfile":
        return cls(((0.0, float(v)),))

    @classmethod
    def brake(cls, v: float, at: float, decel: float) -> "SpeedProfile":
        if decel <= 0:
            raise ValueError("brake deceleration must be positive")
        if at <= 0:
            return cls(((0.0, float(v)), (v / decel, 0.0)))
        return cls(((0.0, float(v)), (float(at), float(v)), (at + v / decel, 0.0)))

    def state(self, t: float) -> tuple[float, float, float]:
        """(distance, speed, acceleration) ``t`` seconds after the profile start."""
        pts = self.points
        if t <= pts[0][0] or len(pts) == 1:
            v0 = pts[0][1]
            return v0 * max(t, 0.0), v0, 0.0
        dist = pts[0][1] * pts[0][0]
        for (t0, v0), (t1, v1) in zip(pts, pts[1:]):
            a = (v1 - v0) / (t1 - t0)
            if t <= t1:
                dt = t - t0
                return dist + v0 * dt + 0.5 * a * dt * dt, v0 + a * dt, a
            dist += 0.5 * (v0 + v1) * (t1 - t0)
        t_last, v_last = pts[-1]
        return dist + v_last * (t - t_last), v_last, 0.0


class ProfileMotion:
    """Agent following ``path`` with a switchable speed profile."""

    def __init__(self, path: Polyline, profile: SpeedProfile, start_s: float = 0.0, start_time: float = 0.0):
        self.path = path
        self.profile = profile
        self.base_s = start_s
        self.start_time = start_time

    def switch(self, profile: SpeedProfile, t: float) -> None:
        s, _, _ = self.profile.state(t - self.start_time)
        self.base_s += s
        self.profile = profile
        self.start_time = t

    def state(self, t: float):
        """(x, y, heading, speed, accel, s) at absolute time ``t``."""
        ds, v, a = self.profile.state(t - self.start_time)
        s = self.base_s + ds
        pt, u = self.path.at(s)
        return float(pt[0]), float(pt[1]), math.atan2(u[1], u[0]), v, a, s


class ReplayMotion:
    """Recorded (t, x, y, theta, v[, a]) samples, linearly interpolated.

    Query times within ``SNAP`` of a sample return that sample unchanged, so a
    trace written at the tick rate replays exactly.
    """

    SNAP = 1e-5  # s

    def __init__(self, samples: Sequence[Sequence[float]]):
        arr = np.asarray(samples, dtype=float)
        if arr.ndim != 2 or arr.shape[1] not in (5, 6) or len(arr) < 2:
            raise ValueError("replay needs at least two (t, x, y, theta, v[, a]) samples")
        if np.any(np.diff(arr[:, 0]) <= 0):
            raise ValueError("replay sample times must be strictly increasing")
        self.samples = arr

    def state(self, t: float):
        """(x, y, theta, v, a) at absolute time ``t``."""
        a = self.samples
        i = int(np.clip(np.searchsorted(a[:, 0], t, side="right") - 1, 0, len(a) - 2))
        for j in (i, i + 1):
            if abs(t - a[j, 0]) < self.SNAP or (j == 0 and t < a[0, 0]) or (j == len(a) - 1 and t > a[j, 0]):
                return self._row(j)
        w = (t - a[i, 0]) / (a[i + 1, 0] - a[i, 0])
        row = a[i] + w * (a[i + 1] - a[i])
        dtheta = math.atan2(math.sin(a[i + 1, 3] - a[i, 3]), math.cos(a[i + 1, 3] - a[i, 3]))
        theta = math.atan2(math.sin(a[i, 3] + w * dtheta), math.cos(a[i, 3] + w * dtheta))
        return float(row[1]), float(row[2]), theta, float(row[4]), self._accel(i, row)

    def _accel(self, i: int, row) -> float:
        a = self.samples
        if a.shape[1] == 6:
            return float(row[5])
        return float((a[i + 1, 4] - a[i, 4]) / (a[i + 1, 0] - a[i, 0]))

    def _row(self, j: int):
        a = self.samples
        k = min(j, len(a) - 2)
        return float(a[j, 1]), float(a[j, 2]), float(a[j, 3]), float(a[j, 4]), self._accel(k, a[j])
