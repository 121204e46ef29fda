"""Maneuver planning: targets, quintic candidates, feasibility and cost ranking."""

from sdvsim.planner.config import COST_NAMES, DEFAULT_WEIGHTS, MANEUVERS, Limits, ManeuverConfig, config_from_params
from sdvsim.planner.core import (
    Feasibility,
    PlanningError,
    PlanResult,
    RankedCandidate,
    check_feasibility,
    cost_components,
    dump_candidates,
    fallback_stop,
    generate_candidates,
    plan,
    rank_and_select,
)
from sdvsim.planner.targets import TargetError, TargetState, find_targets

__all__ = [
    "COST_NAMES", "DEFAULT_WEIGHTS", "MANEUVERS", "Limits", "ManeuverConfig", "config_from_params",
    "Feasibility", "PlanningError", "PlanResult", "RankedCandidate", "check_feasibility",
    "cost_components", "dump_candidates", "fallback_stop", "generate_candidates", "plan",
    "rank_and_select", "TargetError", "TargetState", "find_targets",
]
