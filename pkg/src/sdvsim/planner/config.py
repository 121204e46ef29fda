"""Maneuver configuration: target parameters, sampling, cost weights and limits."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Optional

from sdvsim.params import Range, Symbol

MANEUVERS = ("velocity_keeping", "vehicle_following", "lane_swerve", "merge_in_front", "stop", "reverse")
ALIASES = {
    "velocity": "velocity_keeping",
    "cruise": "velocity_keeping",
    "follow": "vehicle_following",
    "lane_change": "lane_swerve",
    "swerve": "lane_swerve",
    "cutin": "merge_in_front",
    "merge": "merge_in_front",
}
COST_NAMES = ("time", "efficiency", "lane_offset", "jerk", "acceleration", "proximity")
DEFAULT_WEIGHTS = (1.0, 2.0, 1.0, 0.5, 0.5, 3.0)
# maneuvers that finish once their target lane is reached; the others run until replaced
DISCRETE = ("lane_swerve", "merge_in_front")


def canonical_maneuver(name: str) -> str:
    name = ALIASES.get(name, name)
    if name not in MANEUVERS:
        raise ValueError(f"unknown maneuver {name!r}")
    return name


@dataclass(frozen=True)
class Limits:
    max_jerk_lon: float = 15.0  # m/s^3
    max_jerk_lat: float = 15.0
    max_accel_lon: float = 6.0  # m/s^2
    max_accel_lat: float = 4.0


@dataclass(frozen=True)
class ManeuverConfig:
    maneuver: str = "velocity_keeping"
    target_speed: object = Range.percent(14.0, 10.0)  # m/s
    time_gap: object = Range.between(1.8, 2.2)  # s
    min_gap: float = 2.0  # m, following distance floor at low speed
    lateral_offset: object = 0.0  # m from the target lane center
    target_lane_id: int = 0  # relative: +1 left, -1 right
    target_lane: Optional[int] = None  # absolute lane index, filled in at decision time
    stop_point: Optional[float] = None  # m along the planner's path
    stop_at: Optional[str] = None  # "goal" | "stop_line" when stop_point is not given
    stop_margin: object = 0.0  # m short of the stop point
    resume_delay: float = 0.0  # s, wait after green before driving off
    target: object = None  # target vehicle id, or "ego"
    delta_s: tuple = (0.0, 0.0, 0.0)  # (gap m, relative speed m/s, relative accel m/s^2)
    acceptance_gap: object = None  # m
    horizon: Range = Range.between(2.0, 5.0)  # s
    horizon_samples: int = 3
    target_time: Optional[float] = None  # s, defaults to the horizon center
    samples_per_param: int = 3
    sampling: str = "uniform"
    cost_weights: tuple = DEFAULT_WEIGHTS
    proximity_weights: tuple = ()  # ((actor id, multiplier), ...)
    limits: Limits = field(default_factory=Limits)
    collision_check: bool = True
    ignore_target_collision: bool = False

    def __post_init__(self):
        object.__setattr__(self, "maneuver", canonical_maneuver(self.maneuver))
        if self.samples_per_param < 1 or self.horizon_samples < 1:
            raise ValueError("sample counts must be >= 1")
        if any(w < 0 for w in self.cost_weights) or len(self.cost_weights) != 6:
            raise ValueError("need 6 non-negative cost weights")
        if not (0.0 < self.horizon.lo <= self.horizon.hi <= 10.0):
            raise ValueError(f"horizon {self.horizon} outside (0, 10] s")

    @property
    def time_target(self) -> float:
        return self.target_time if self.target_time is not None else self.horizon.center

    def proximity_multiplier(self, actor_id) -> float:
        for aid, mult in self.proximity_weights:
            if aid == actor_id:
                return float(mult)
        return 1.0

    def with_params(self, **kw) -> "ManeuverConfig":
        return replace(self, **kw)


_WEIGHT_KEYS = {f"w_{n}": i for i, n in enumerate(COST_NAMES)}
_LIMIT_KEYS = {f.name for f in fields(Limits)}
_FIELD_KEYS = {f.name for f in fields(ManeuverConfig)} - {"maneuver", "cost_weights", "limits", "proximity_weights"}
# keys accepted on a maneuver leaf in a behavior tree
PARAM_KEYS = frozenset(_FIELD_KEYS | set(_WEIGHT_KEYS) | _LIMIT_KEYS | {"proximity_ego"})


def _plain(v):
    if isinstance(v, Symbol):
        return v.name
    if isinstance(v, list):
        return tuple(_plain(x) for x in v)
    if isinstance(v, tuple):
        return tuple(_plain(x) for x in v)
    return v


def _horizon(v) -> Range:
    if isinstance(v, Range):
        return v
    if isinstance(v, tuple):
        return Range.between(float(v[0]), float(v[1]))
    return Range(float(v), float(v), float(v))


def config_from_params(maneuver: str, params: dict, base: Optional[ManeuverConfig] = None, ego_id=None) -> ManeuverConfig:
    """Build a config from behavior-tree leaf parameters on top of ``base``."""
    kind = canonical_maneuver(maneuver)
    unknown = set(params) - PARAM_KEYS
    if unknown:
        raise ValueError(f"unknown parameter(s) for maneuver {kind}: {', '.join(sorted(unknown))}")
    cfg = base or ManeuverConfig(maneuver=kind)
    kw: dict = {"maneuver": kind}
    weights = list(cfg.cost_weights)
    limits = {f.name: getattr(cfg.limits, f.name) for f in fields(Limits)}
    prox = dict(cfg.proximity_weights)
    for key, val in params.items():
        val = _plain(val)
        if key in _WEIGHT_KEYS:
            weights[_WEIGHT_KEYS[key]] = float(val)
        elif key in _LIMIT_KEYS:
            limits[key] = float(val)
        elif key == "proximity_ego":
            prox["ego"] = float(val)
        elif key == "horizon":
            kw[key] = _horizon(val)
        elif key == "delta_s":
            vals = val if isinstance(val, tuple) else (val,)
            kw[key] = tuple(vals) + (0.0,) * (3 - len(vals))
        else:
            kw[key] = val
    if kind == "merge_in_front" and "ignore_target_collision" not in params:
        kw["ignore_target_collision"] = True
    if "target" in kw and kw["target"] == "ego" and ego_id is not None:
        kw["target"] = ego_id
    if "ego" in prox and ego_id is not None:
        prox[ego_id] = prox.pop("ego")
    kw["cost_weights"] = tuple(weights)
    kw["limits"] = Limits(**limits)
    kw["proximity_weights"] = tuple(sorted(prox.items(), key=lambda kv: str(kv[0])))
    return replace(cfg, **kw)
