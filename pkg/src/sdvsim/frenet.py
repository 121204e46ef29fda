"""Frenet-frame states, quintic polynomials and the Cartesian <-> Frenet transforms."""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass
from typing import Sequence

import numpy as np

from sdvsim.world_map import ReferencePath

STANDSTILL_SPEED = 1e-3  # m/s, below this the heading follows the path tangent
_T_EPS = 1e-9


class TransformError(ValueError):
    """Raised when a state cannot be expressed in the requested frame."""


class DomainError(ValueError):
    """Raised for polynomial or trajectory arguments outside their domain."""


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


@dataclass(frozen=True)
class CartesianState:
    x: float = 0.0
    x_dot: float = 0.0
    x_ddot: float = 0.0
    y: float = 0.0
    y_dot: float = 0.0
    y_ddot: float = 0.0
    theta: float = 0.0

    @property
    def speed(self) -> float:
        return math.hypot(self.x_dot, self.y_dot)

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)

    def as_tuple(self) -> tuple[float, ...]:
        return astuple(self)


@dataclass(frozen=True)
class FrenetState:
    s: float = 0.0
    s_dot: float = 0.0
    s_ddot: float = 0.0
    d: float = 0.0
    d_dot: float = 0.0
    d_ddot: float = 0.0

    @property
    def lon(self) -> tuple[float, float, float]:
        return (self.s, self.s_dot, self.s_ddot)

    @property
    def lat(self) -> tuple[float, float, float]:
        return (self.d, self.d_dot, self.d_ddot)

    def as_tuple(self) -> tuple[float, ...]:
        return astuple(self)


def to_frenet(state: CartesianState, path: ReferencePath) -> FrenetState:
    """Express a Cartesian state in the Frenet frame of ``path``."""
    s, _ = path.project1(state.x, state.y)
    px, py, tx, ty, _, k, dk = path.frame1(s)
    nx, ny = -ty, tx
    d = (state.x - px) * nx + (state.y - py) * ny
    one_kd = 1.0 - k * d
    if one_kd <= 0.0:
        raise TransformError(f"projection ambiguous: curvature*d = {k * d:.3f} >= 1")
    s_dot = (state.x_dot * tx + state.y_dot * ty) / one_kd
    d_dot = state.x_dot * nx + state.y_dot * ny
    s_ddot = (state.x_ddot * tx + state.y_ddot * ty + dk * s_dot**2 * d + 2.0 * k * s_dot * d_dot) / one_kd
    d_ddot = state.x_ddot * nx + state.y_ddot * ny - k * s_dot**2 * one_kd
    return FrenetState(s, s_dot, s_ddot, d, d_dot, d_ddot)


def _heading(path_heading, long_v, lat_v):
    if math.hypot(long_v, lat_v) < STANDSTILL_SPEED:
        return wrap_angle(path_heading)
    if long_v == 0.0:
        return wrap_angle(path_heading + math.copysign(math.pi / 2.0, lat_v))
    return wrap_angle(path_heading + math.atan(lat_v / long_v))


def to_cartesian(state: FrenetState, path: ReferencePath) -> CartesianState:
    """Inverse of :func:`to_frenet`."""
    if not (-1e-9 <= state.s <= path.length + 1e-9):
        raise TransformError(f"s = {state.s:.3f} outside reference path [0, {path.length:.3f}]")
    px, py, tx, ty, hd, k, dk = path.frame1(state.s)
    nx, ny = -ty, tx
    d, sd, sdd = state.d, state.s_dot, state.s_ddot
    dd, ddd = state.d_dot, state.d_ddot
    one_kd = 1.0 - k * d
    if one_kd <= 0.0:
        raise TransformError(f"curvature*d = {k * d:.3f} >= 1")
    v_t, v_n = sd * one_kd, dd
    acc_t = sdd * one_kd - dk * sd**2 * d - 2.0 * k * sd * dd
    acc_n = k * sd**2 * one_kd + ddd
    theta = _heading(hd, v_t, v_n)
    return CartesianState(
        px + d * nx, v_t * tx + v_n * nx, acc_t * tx + acc_n * nx,
        py + d * ny, v_t * ty + v_n * ny, acc_t * ty + acc_n * ny, theta,
    )


def to_cartesian_batch(path: ReferencePath, s, s_dot, d, d_dot):
    """Vectorized positions, headings and speeds for arrays of Frenet samples."""
    s = np.clip(np.asarray(s, float), 0.0, path.length)
    pt, t, hd, k, _ = path.frame(s)
    n = np.stack([-t[..., 1], t[..., 0]], axis=-1)
    d = np.asarray(d, float)
    pos = pt + d[..., None] * n
    long_v = np.asarray(s_dot) * (1.0 - k * d)
    vel = long_v[..., None] * t + np.asarray(d_dot)[..., None] * n
    return pos, vel


@dataclass(frozen=True)
class QuinticPoly:
    """p(t) = c0 + c1 t + ... + c5 t^5, with t measured from the trajectory start."""

    coeffs: tuple[float, float, float, float, float, float]

    def __post_init__(self):
        if len(self.coeffs) != 6 or not all(math.isfinite(c) for c in self.coeffs):
            raise DomainError(f"quintic needs 6 finite coefficients, got {self.coeffs!r}")

    def eval(self, t, order: int = 0):
        c = np.polynomial.polynomial.polyder(self.coeffs, order) if order else np.asarray(self.coeffs)
        return np.polynomial.polynomial.polyval(t, c)

    def __call__(self, t):
        return self.eval(t)


def solve_quintic(start: Sequence[float], end: Sequence[float], T: float) -> QuinticPoly:
    """Jerk-minimal quintic meeting position, velocity and acceleration at both ends.

    Solved in normalized time tau = t/T, where the boundary system has a fixed
    closed-form inverse, then scaled back to seconds.
    """
    if not T > 0.0:
        raise DomainError(f"duration must be positive, got {T}")
    p0, v0, a0 = (float(x) for x in start)
    p1, v1, a1 = (float(x) for x in end)
    V0, V1 = v0 * T, v1 * T
    A0, A1 = a0 * T * T, a1 * T * T
    h = p1 - p0 - V0 - 0.5 * A0
    hv = V1 - V0 - A0
    ha = A1 - A0
    b3 = 10.0 * h - 4.0 * hv + 0.5 * ha
    b4 = -15.0 * h + 7.0 * hv - ha
    b5 = 6.0 * h - 3.0 * hv + 0.5 * ha
    return QuinticPoly((p0, v0, 0.5 * a0, b3 / T**3, b4 / T**4, b5 / T**5))


def jerk_cost(poly: QuinticPoly, T: float) -> float:
    """Closed-form integral of the squared third derivative over [0, T]."""
    if not T > 0.0:
        raise DomainError(f"duration must be positive, got {T}")
    c = poly.coeffs
    A, B, C = 6.0 * c[3], 24.0 * c[4], 60.0 * c[5]
    return A * A * T + A * B * T**2 + (B * B + 2.0 * A * C) * T**3 / 3.0 + B * C * T**4 / 2.0 + C * C * T**5 / 5.0


def squared_integral(poly: QuinticPoly, T: float, order: int) -> float:
    """Integral of the squared ``order``-th derivative over [0, T]."""
    P = np.polynomial.Polynomial(poly.coeffs).deriv(order)
    return float((P * P).integ()(T))


@dataclass(frozen=True)
class FrenetTrajectory:
    s_poly: QuinticPoly
    d_poly: QuinticPoly
    T: float
    t0: float = 0.0

    def __post_init__(self):
        if not self.T > 0.0:
            raise DomainError(f"trajectory duration must be positive, got {self.T}")

    @property
    def t_end(self) -> float:
        return self.t0 + self.T

    def sample(self, times):
        """Arrays (s, s_dot, s_ddot, d, d_dot, d_ddot) at absolute ``times``."""
        tau = np.asarray(times, float) - self.t0
        return tuple(p.eval(tau, k) for p in (self.s_poly, self.d_poly) for k in range(3))

    def state_at(self, t: float) -> FrenetState:
        return eval_trajectory(self, t)


def eval_trajectory(traj: FrenetTrajectory, t: float) -> FrenetState:
    tau = t - traj.t0
    if tau < -_T_EPS or tau > traj.T + _T_EPS:
        raise DomainError(f"t = {t:.6f} outside trajectory window [{traj.t0:.6f}, {traj.t_end:.6f}]")
    tau = min(max(tau, 0.0), traj.T)
    s, sd, sdd = (float(traj.s_poly.eval(tau, k)) for k in range(3))
    d, dd, ddd = (float(traj.d_poly.eval(tau, k)) for k in range(3))
    return FrenetState(s, sd, sdd, d, dd, ddd)


def constant_velocity_trajectory(state: FrenetState, T: float, t0: float = 0.0) -> FrenetTrajectory:
    """Keep current speed and lateral position; used to seed vehicles at start."""
    return FrenetTrajectory(
        QuinticPoly((state.s, state.s_dot, 0.0, 0.0, 0.0, 0.0)),
        QuinticPoly((state.d, 0.0, 0.0, 0.0, 0.0, 0.0)),
        T,
        t0,
    )
