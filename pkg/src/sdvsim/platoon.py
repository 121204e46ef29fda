"""Single-lane platoons for scalability runs."""

from __future__ import annotations

from importlib import resources

from sdvsim.scenario import Scenario, scenario_from_dict

SPACING = 30.0  # m between platoon members at start
SPEED = 12.0  # m/s
OBSTACLE_AHEAD = 250.0  # m in front of the platoon leader


def _data(rel: str) -> str:
    return str(resources.files("sdvsim") / "data" / rel)


def platoon_doc(vehicles: int, obstacle: bool = False, duration: float = 120.0, seed: int = 0) -> dict:
    """Scenario document: ``vehicles`` SDVs in the right lane, a pacing Ego in the left lane.

    Without an obstacle collision checking is off for every SDV; with one, a
    stopped vehicle blocks the right lane and the SDVs pass it on the left.
    """
    if vehicles < 1:
        raise ValueError("platoon needs at least one vehicle")
    road_end = 5900.0
    lead_x = SPACING * vehicles + 50.0
    agents = [{
        "id": 0, "kind": "Ego", "route": [[lead_x + 40.0, 3.5], [road_end, 3.5]],
        "script": {"type": "constant", "speed": SPEED},
    }]
    tree = "platoon_avoid" if obstacle else "platoon"
    for i in range(vehicles):
        agents.append({
            "id": i + 1, "kind": "SDV", "route": [[lead_x - SPACING * i, 0.0], [road_end, 0.0]],
            "speed": SPEED, "tree": tree, "config": {"collision_check": obstacle},
        })
    if obstacle:
        x = lead_x + OBSTACLE_AHEAD
        agents.append({"id": vehicles + 1, "kind": "PDT", "route": [[x, 0.0], [x + 10.0, 0.0]], "profile": [[0, 0.0]]})
    return {
        "format_version": 1,
        "name": f"platoon_{vehicles}{'_obstacle' if obstacle else ''}",
        "seed": seed,
        "map": _data("maps/platoon_road.yaml"),
        "trees": [_data("trees/standard.bt"), _data("trees/platoon.bt")],
        "agents": agents,
        "end": {"timeout": duration, "collision": False},
    }


def platoon_scenario(vehicles: int, obstacle: bool = False, duration: float = 120.0, seed: int = 0) -> Scenario:
    return scenario_from_dict(platoon_doc(vehicles, obstacle, duration, seed))
