import math
from importlib import resources

import numpy as np
import pytest

from sdvsim.engine import (
    NOT_APPLICABLE,
    EngineConfig,
    SimClock,
    TimingLog,
    compute_rate_compliance,
    format_trace,
    frenet_to_cartesian,
    run,
)
from sdvsim.scenario import load_scenario, scenario_from_dict

DATA = resources.files("sdvsim") / "data"


def doc(agents, timeout=10.0, map_name="straight", trees=("standard.bt",), **extra):
    d = {
        "format_version": 1,
        "name": "fixture",
        "map": str(DATA / "maps" / f"{map_name}.yaml"),
        "trees": [str(DATA / "trees" / t) for t in trees],
        "agents": agents,
        "end": {"timeout": timeout},
    }
    d.update(extra)
    return scenario_from_dict(d)


def ego(x=0.0, speed=10.0, y=0.0, **script):
    return {"id": 0, "kind": "Ego", "route": [[x, y], [1900, y]], "script": {"type": "constant", "speed": speed, **script}}


def sdv(aid, x, speed, tree="cruise", y=0.0, **config):
    return {"id": aid, "kind": "SDV", "route": [[x, y], [1900, y]], "speed": speed, "tree": tree, "config": config}


def test_empty_run_counts():
    r = run(doc([ego()]))
    assert (r.ticks, r.plan_cycles, r.end_reason) == (300, 30, "timeout")
    assert [e.kind for e in r.events] == ["end"]
    assert len(r.traces[0]) == 301


def test_constant_speed_advance():
    r = run(doc([ego(x=1500), sdv(1, 0.0, 10.0, target_speed=10.0)], timeout=5))
    s = np.array([row[6] for row in r.traces[1]])
    assert np.allclose(np.diff(s), 10.0 / 30.0, atol=1e-6)


def test_pdt_linear_interpolation():
    pdt = {"id": 2, "kind": "PDT", "route": [[10, 0], [310, 0]], "profile": [[0, 6.0]]}
    r = run(doc([ego(x=1500), pdt], timeout=5))
    for t, x, y, *_ in r.traces[2]:
        assert x == pytest.approx(10.0 + 6.0 * t, abs=1e-9)
        assert y == pytest.approx(0.0, abs=1e-12)


def test_lockstep_traces_aligned():
    r = run(doc([ego(x=200), sdv(1, 0.0, 12.0)], timeout=4))
    t0 = [row[0] for row in r.traces[0]]
    t1 = [row[0] for row in r.traces[1]]
    assert t0 == t1


def test_lead_braking_switches_to_following():
    sc = doc([ego(x=100, speed=14, type="brake", at=3.0, decel=4.0), sdv(1, 20.0, 14.0, tree="drive")], timeout=12)
    r = run(sc)
    lead = {round(row[0], 6): row[1] for row in r.traces[0]}
    crossing = next(row[0] for row in r.traces[1] if lead[round(row[0], 6)] - row[1] - 4.5 <= 60.0)
    switch = next(e.time for e in r.events if e.kind == "maneuver" and e.info["to"] == "vehicle_following")
    plan_dt = 1.0 / 3.0
    assert crossing - plan_dt - 1e-6 <= switch <= crossing + 2 * plan_dt + 1e-6
    assert not r.collisions()


def test_trajectory_junctions_continuous():
    sc = doc([ego(x=1800, speed=0.0), sdv(1, 0.0, 8.0, target_speed=12.0)], timeout=12)
    prev = {}
    jumps = []

    def watch(world):
        v = world.vehicles[1]
        at = v.active_traj
        old = prev.get("at")
        if old is not None and at is not old:
            t = world.clock.sim_time
            a = frenet_to_cartesian(old.state(t), old.path)
            b = frenet_to_cartesian(at.state(t), at.path)
            jumps.append(max(abs(a.x - b.x), abs(a.y - b.y), abs(a.speed - b.speed)))
        prev["at"] = at

    run(sc, on_tick=watch)
    assert len(jumps) >= 3
    assert max(jumps) < 1e-6


def test_blocked_lane_falls_back_within_comfort():
    # every candidate of the shortest horizon already reaches the stopped vehicle
    block = {"id": 2, "kind": "PDT", "route": [[20, 0], [30, 0]], "profile": [[0, 0.0]]}
    r = run(doc([ego(x=1500, speed=0.0), sdv(1, 0.0, 8.0, target_speed=8.0), block], timeout=6))
    fb = [e for e in r.events if e.kind == "fallback" and e.vehicles == (1,)]
    assert fb and fb[0].time == pytest.approx(1.0 / 3.0)
    rows = r.traces[1]
    t_f = fb[0].time
    i = next(k for k, row in enumerate(rows) if row[0] >= t_f - 1e-9)
    accel = np.array([row[4] for row in rows[i:]])
    assert accel.min() >= -4.0 - 1e-6
    s_f, v_f = rows[i][6], rows[i][3]
    assert rows[-1][6] == pytest.approx(s_f + v_f**2 / 8.0, abs=0.05)
    assert not r.collisions()


def test_rate_compliance():
    clock = SimClock()
    assert compute_rate_compliance(TimingLog("lockstep", [0.5], [0.5]), clock) is NOT_APPLICABLE
    rc = compute_rate_compliance(TimingLog("realtime", [0.01, 0.02, 0.05, 0.01], [0.1, 0.4]), clock)
    assert rc.trc == pytest.approx(75.0) and rc.max_tick == pytest.approx(0.05)
    assert rc.tprc == pytest.approx(50.0) and rc.max_plan == pytest.approx(0.4)


def test_bad_engine_config():
    with pytest.raises(ValueError):
        EngineConfig(tick_dt=0.1, plan_dt=0.25)
    with pytest.raises(ValueError):
        EngineConfig(mode="fast")


def test_rear_end_fixture_no_collision():
    r = run(load_scenario(DATA / "scenarios" / "nhtsa_25_lead_decel.yaml"))
    assert not r.collisions()
    assert min(r.min_gaps.values()) > 0.0


def test_cut_in_emergency_row_collides():
    sc = load_scenario(DATA / "scenarios" / "cut_in.yaml")
    r = run(sc_with_params(sc, acceptance=2.0, delta_s=(-5.0, -5.0)))
    hits = r.collisions()
    assert hits
    assert hits[0].info["relative_speed"] == pytest.approx(5.0, abs=1.5)


def sc_with_params(sc, **params):
    from dataclasses import replace

    agents = tuple(replace(a, params={**a.params, **params}) if a.is_sdv else a for a in sc.agents)
    return replace(sc, agents=agents)


def test_workers_do_not_change_traces():
    sc = load_scenario(DATA / "scenarios" / "nhtsa_18_cut_in.yaml")
    a = format_trace(run(sc, EngineConfig(workers=1), until=5))
    b = format_trace(run(sc, EngineConfig(workers=3), until=5))
    assert a == b


def test_no_teleport():
    r = run(load_scenario(DATA / "scenarios" / "cut_in.yaml"), until=8)
    for rows in r.traces.values():
        xy = np.array([(row[1], row[2]) for row in rows])
        step = np.hypot(*np.diff(xy, axis=0).T)
        vmax = max(row[3] for row in rows)
        assert step.max() <= (vmax + 1.0) / 30.0
