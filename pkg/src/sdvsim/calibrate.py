"""Calibration self-consistency on synthetic traces from known driver configurations."""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from importlib import resources
from typing import Optional

import numpy as np

from sdvsim.engine import EngineConfig, run
from sdvsim.metrics import DriverStyleConfig, Trace, extract_style, sted, style_overrides, traces_from_result
from sdvsim.params import Range
from sdvsim.scenario import Scenario, scenario_from_dict

SDV_ID = 1


@dataclass(frozen=True)
class CalibrationCase:
    index: int
    target_speed: float  # m/s, center of the generating configuration
    lateral_offset: float  # m
    start_speed: float  # m/s


@dataclass(frozen=True)
class CalibrationOutcome:
    case: CalibrationCase
    style: DriverStyleConfig
    sted_default: float
    sted_calibrated: float

    @property
    def improved(self) -> bool:
        return self.sted_calibrated < self.sted_default


def make_cases(n: int = 50, seed: int = 0) -> list[CalibrationCase]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        v = float(rng.uniform(8.0, 16.0))
        out.append(CalibrationCase(i, round(v, 3), round(float(rng.uniform(-0.6, 0.6)), 3), round(v + float(rng.uniform(-1.0, 1.0)), 3)))
    return out


def _data(rel: str) -> str:
    return str(resources.files("sdvsim") / "data" / rel)


def cruise_scenario(config: dict, start_speed: float, duration: float = 15.0, seed: int = 0) -> Scenario:
    """Single SDV cruising on a straight road; the Ego waits out of sensor range."""
    doc = {
        "format_version": 1,
        "name": "calibration_cruise",
        "seed": seed,
        "map": _data("maps/straight.yaml"),
        "trees": [_data("trees/standard.bt")],
        "agents": [
            {"id": 0, "kind": "Ego", "route": [[1800, 0], [1900, 0]], "script": {"type": "constant", "speed": 0.0}},
            {"id": SDV_ID, "kind": "SDV", "route": [[0, 0], [1700, 0]], "speed": start_speed, "tree": "cruise", "config": dict(config)},
        ],
        "end": {"timeout": duration, "collision": True},
    }
    return scenario_from_dict(doc)


def simulate(config: dict, start_speed: float, duration: float = 15.0) -> Trace:
    sc = cruise_scenario(config, start_speed, duration)
    return traces_from_result(run(sc, EngineConfig()))[SDV_ID]


def generating_config(case: CalibrationCase) -> dict:
    return {"target_speed": Range.percent(case.target_speed, 5.0), "lateral_offset": case.lateral_offset}


def calibrate_case(case: CalibrationCase, duration: float = 15.0, default: Optional[dict] = None) -> CalibrationOutcome:
    sc = cruise_scenario({}, case.start_speed, duration)
    empirical = simulate(generating_config(case), case.start_speed, duration)
    style = extract_style(empirical, sc.map)
    over = style_overrides(style)
    calibrated = simulate({k: over[k] for k in ("target_speed", "lateral_offset")}, case.start_speed, duration)
    baseline = simulate(default or {}, case.start_speed, duration)
    return CalibrationOutcome(case, style, sted(empirical, baseline), sted(empirical, calibrated))


def self_consistency(n: int = 50, seed: int = 0, duration: float = 15.0) -> dict:
    outcomes = [calibrate_case(c, duration) for c in make_cases(n, seed)]
    cal = [o.sted_calibrated for o in outcomes]
    return {
        "outcomes": outcomes,
        "improved_fraction": sum(o.improved for o in outcomes) / len(outcomes),
        "median_calibrated": statistics.median(cal),
        "median_default": statistics.median(o.sted_default for o in outcomes),
    }
