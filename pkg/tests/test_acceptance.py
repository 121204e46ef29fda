"""Acceptance criteria, one test each; every test prints a PASS/FAIL line."""

import math
import random
import time
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np
import pytest
from scipy.integrate import quad

from bt_oracle import SNAPSHOT, build, condition_uids, reference
from sdvsim.behavior import Blackboard, internal_reuse_level, link_library, load_tree_file, tick
from sdvsim.behavior.dsl import BTNode
from sdvsim.calibrate import self_consistency
from sdvsim.engine import EngineConfig, format_trace, run
from sdvsim.frenet import FrenetState, jerk_cost, solve_quintic, to_cartesian, to_frenet
from sdvsim.metrics import Trace, sted
from sdvsim.platoon import platoon_scenario
from sdvsim.scenario import load_scenario
from sdvsim.world_map import ReferencePath

DATA = resources.files("sdvsim") / "data"
SCENARIOS = DATA / "scenarios"


@pytest.fixture
def verdict(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}: {detail}")
        assert ok, detail

    return emit


def _ok(cond, failures, msg):
    if not cond:
        failures.append(msg)


def test_c01_quintic(verdict):
    rng = np.random.default_rng(1)
    failures = []
    t0 = time.perf_counter()
    for i in range(1000):
        start = rng.uniform(-50, 50, 3)
        end = rng.uniform(-50, 50, 3)
        T = rng.uniform(0.5, 8.0)
        p = solve_quintic(start, end, T)
        for k in range(3):
            _ok(abs(p.eval(0.0, k) - start[k]) <= 1e-9, failures, f"case {i} start[{k}]")
            _ok(abs(p.eval(T, k) - end[k]) <= 1e-9 * max(1.0, abs(end[k])), failures, f"case {i} end[{k}]")
        c3 = np.polynomial.polynomial.polyder(p.coeffs, 3)
        ref = quad(lambda t: np.polynomial.polynomial.polyval(t, c3) ** 2, 0.0, T, epsabs=0, epsrel=1e-13, limit=200)[0]
        _ok(abs(jerk_cost(p, T) - ref) <= 1e-9 * ref, failures, f"case {i} jerk")
    elapsed = time.perf_counter() - t0
    canonical = solve_quintic((0, 0, 0), (1, 0, 0), 1.0).coeffs == (0.0, 0.0, 0.0, 10.0, -15.0, 6.0)
    ok = not failures and canonical and elapsed < 5.0
    verdict(1, "quintic correctness", ok, f"1000 cases, {len(failures)} mismatches, canonical {canonical}, {elapsed:.2f} s")


def _round_trip_errors(path, states):
    errs = []
    for s, d, sd, dd in states:
        c = to_cartesian(FrenetState(s, sd, 0.0, d, dd, 0.0), path)
        c2 = to_cartesian(to_frenet(c, path), path)
        errs.append(math.hypot(c.x - c2.x, c.y - c2.y))
    return max(errs)


def test_c02_frenet_round_trip(verdict):
    rng = np.random.default_rng(2)
    straight = ReferencePath([(0, 0), (50, 0), (100, 0), (200, 0)])
    circle = ReferencePath([(20 * math.cos(a), 20 * math.sin(a)) for a in np.linspace(-math.pi / 2, 0, 64)])
    n = 10_000
    t0 = time.perf_counter()
    e_straight = _round_trip_errors(straight, zip(rng.uniform(0, 200, n), rng.uniform(-3, 3, n), rng.uniform(0.5, 30, n), rng.uniform(-2, 2, n)))
    e_circle = _round_trip_errors(circle, zip(rng.uniform(1, circle.length - 1, n), rng.uniform(-3, 3, n), rng.uniform(0.5, 15, n), rng.uniform(-1, 1, n)))
    elapsed = time.perf_counter() - t0
    ok = e_straight < 1e-6 and e_circle < 0.01 and elapsed < 10.0
    verdict(2, "Frenet round trip", ok, f"max error straight {e_straight:.2e} m, quarter circle {e_circle:.2e} m, {2 * n} states, {elapsed:.2f} s")


def _random_shape(r: random.Random, depth=0):
    if depth >= 3 or r.random() < 0.35:
        if r.random() < 0.67:
            return ("condition", r.random() < 0.5)
        return ("maneuver", r.choice(["velocity_keeping", "stop"]))
    kids = [_random_shape(r, depth + 1) for _ in range(r.randint(1, 4))]
    return (r.choice(["fallback", "sequence", "parallel"]), kids, r.randint(1, 4))


def test_c03_behavior_tree_semantics(verdict):
    r = random.Random(3)
    failures = []
    cases = 10_000
    for i in range(cases):
        shape = _random_shape(r)
        root = build(shape)
        res = tick(root, SNAPSHOT, Blackboard())
        trace = []
        status, decision = reference(root, trace)
        _ok(res.status == status and (res.decision.node if res.decision else None) == decision, failures, f"case {i} status")
        _ok(list(res.evaluated) == trace, failures, f"case {i} evaluation order")
        _ok(tick(root, SNAPSHOT, Blackboard()) == res, failures, f"case {i} determinism")
        if res.decision is not None:
            _ok(res.decision.node in {n.uid for n in root.walk() if n.kind == "maneuver"}, failures, f"case {i} decision")
        other = build(_random_shape(r), "r/1")
        left = build(shape, "r/0")
        for op, stop in (("fallback", "success"), ("sequence", "failure")):
            pair = BTNode(op, op, [left, other], uid="r")
            rp = tick(pair, SNAPSHOT, Blackboard())
            if tick(left, SNAPSHOT, Blackboard()).status == stop:
                _ok(not condition_uids(other) & set(rp.evaluated), failures, f"case {i} short circuit {op}")
    lib = link_library(load_tree_file(DATA / "trees" / "standard.bt") + load_tree_file(DATA / "trees" / "cut_in.bt"))
    p = lib.resolved_params("cut_in")
    params_ok = (
        math.isclose(p["target_speed"].lo, 12.6) and math.isclose(p["target_speed"].hi, 15.4) and p["target_speed"].center == 14
        and math.isclose(p["acceptance"].lo, 4.5) and math.isclose(p["acceptance"].hi, 5.5) and p["acceptance"].center == 5
        and tuple(p["delta_s"]) == (5, -3)
    )
    ok = not failures and params_ok
    verdict(3, "behavior tree semantics", ok, f"{cases} random trees, {len(failures)} violations, cut-in parameters {'match' if params_ok else 'differ'}")


def _with_params(sc, **params):
    agents = tuple(replace(a, params={**a.params, **params}) if a.is_sdv else a for a in sc.agents)
    return replace(sc, agents=agents)


def _gap_at_merge(result):
    ev = next(e for e in result.events if e.kind == "maneuver" and e.info["to"] == "merge_in_front")
    ego = {round(row[0], 6): row[1] for row in result.traces[0]}
    sdv = {round(row[0], 6): row[1] for row in result.traces[1]}
    t = round(ev.time, 6)
    return sdv[t] - ego[t] - 4.5


def test_c04_cut_in(verdict):
    sc = load_scenario(SCENARIOS / "cut_in.yaml")
    t0 = time.perf_counter()
    parts, ok = [], True
    for acc in (2.0, 5.0):
        r = run(_with_params(sc, acceptance=acc))
        g = _gap_at_merge(r)
        inside = 0.9 * acc <= g <= 1.1 * acc
        ok &= inside
        parts.append(f"acceptance {acc:g} observed {g:.3f}")
    # relative speed -3 is the tree default; at -5 a non-braking Ego runs into
    # a vehicle 5 m ahead shortly after any merge, so the +5 case uses -3
    outcomes = {}
    for acc in (2.0, 5.0):
        for ds in ((-5.0, -5.0), (-5.0, -3.0), (5.0, -3.0)):
            outcomes[acc, ds] = bool(run(_with_params(sc, acceptance=acc, delta_s=ds)).collisions())
    elapsed = time.perf_counter() - t0
    crash_ok = all(v for (acc, ds), v in outcomes.items() if ds[0] < 0)
    safe_ok = not any(v for (acc, ds), v in outcomes.items() if ds[0] > 0)
    ok = ok and crash_ok and safe_ok and elapsed < 60.0
    parts.append(f"target gap -5 collides {crash_ok}, target gap +5 collision-free {safe_ok}, {elapsed:.1f} s")
    verdict(4, "cut-in reproduction", ok, "; ".join(parts))


NHTSA = ("nhtsa_18_cut_in.yaml", "nhtsa_25_lead_decel.yaml", "nhtsa_30_crossing.yaml", "nhtsa_05_stop_sign.yaml")


def test_c05_nhtsa_fixtures(verdict):
    parts, ok = [], True
    for name in NHTSA:
        sc = load_scenario(SCENARIOS / name)
        runs = [run(sc) for _ in range(3)]
        traces = {format_trace(r) for r in runs}
        r = runs[0]
        min_gap = min(r.min_gaps.values()) if r.min_gaps else math.inf
        critical = bool(r.collisions()) or min_gap < 2.0
        ok &= critical and len(traces) == 1
        parts.append(f"{name.split('_')[1]}: {'collision' if r.collisions() else f'min gap {min_gap:.2f} m'}, {'deterministic' if len(traces) == 1 else 'NONDETERMINISTIC'}")
    verdict(5, "NHTSA fixtures", ok, "; ".join(parts))


# hand counts: drive has 5 nodes and is shared; merge_ahead adds 8 own nodes
# around two drive inclusions, overtake adds 6, signal_stop adds 5
EXPECTED_IRL = {"reuse_cruise": 5 / 5, "reuse_merge": 10 / 18, "reuse_overtake": 5 / 11, "reuse_signal": 5 / 10}


def test_c06_reuse(verdict):
    scs = [load_scenario(p) for p in sorted(Path(DATA / "reuse").glob("*.yaml"))]
    manifests = {s.name: s.root_trees() for s in scs}
    parts, ok = [], True
    for s in scs:
        static = internal_reuse_level(s.root_trees(), s.library, manifests=manifests)
        r = run(s)
        executed = set().union(*r.executed.values())
        dyn = internal_reuse_level(s.root_trees(), s.library, executed_nodes=executed, manifests=manifests)
        ok &= math.isclose(static, EXPECTED_IRL[s.name]) and dyn <= static
        parts.append(f"{s.name[6:]} {static:.4f} (executed {dyn:.4f})")
    ok &= 1.0 in {round(v, 12) for v in EXPECTED_IRL.values()}
    verdict(6, "reuse metric", ok, ", ".join(parts))


def test_c07_sted(verdict):
    rng = np.random.default_rng(7)
    t = np.arange(300) / 30
    a = Trace.from_arrays(1, t, 10 * t, np.zeros_like(t))
    identical = sted(a, a)
    offset = sted(a, a.translated(3.0, 4.0))
    worst_sym = worst_tr = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 60))
        ta = np.arange(n) / 30 + rng.uniform(0, 2)
        tb = np.arange(n) / 30 + rng.uniform(0, 2)
        if tb[-1] <= ta[0] or ta[-1] <= tb[0]:
            tb = ta + 1 / 60
        p = Trace.from_arrays(1, ta, rng.uniform(-100, 100, n), rng.uniform(-100, 100, n))
        q = Trace.from_arrays(2, tb, rng.uniform(-100, 100, n), rng.uniform(-100, 100, n))
        d = sted(p, q)
        dx, dy = rng.uniform(-1e3, 1e3, 2)
        worst_sym = max(worst_sym, abs(d - sted(q, p)))
        worst_tr = max(worst_tr, abs(d - sted(p.translated(dx, dy), q.translated(dx, dy))))
    ok = identical == 0.0 and abs(offset - 5.0) <= 1e-9 and worst_sym <= 1e-9 and worst_tr <= 1e-9
    verdict(7, "STED", ok, f"identical {identical}, (3,4) offset {offset:.12f}, max asymmetry {worst_sym:.1e}, max translation change {worst_tr:.1e} over 1000 pairs")


def test_c08_calibration(verdict):
    t0 = time.perf_counter()
    res = self_consistency(50)
    elapsed = time.perf_counter() - t0
    ok = res["improved_fraction"] >= 0.9 and res["median_calibrated"] < 0.3 and elapsed < 300
    verdict(8, "calibration self-consistency", ok, f"improved {res['improved_fraction']:.0%}, median STED calibrated {res['median_calibrated']:.3f} m vs default {res['median_default']:.3f} m, {elapsed:.0f} s")


def test_c09_realtime_platoon(verdict):
    r = run(platoon_scenario(10, obstacle=False, duration=20.0), EngineConfig(mode="realtime"))
    rc = r.compliance()
    ok = rc.tprc >= 99.0
    verdict(9, "realtime 10-vehicle platoon", ok, f"TPRC {rc.tprc:.1f}% (max plan {rc.max_plan:.3f} s), TRC {rc.trc:.1f}% reported only (max tick {rc.max_tick:.4f} s)")


def test_c10_determinism(verdict):
    parts, ok = [], True
    for name, sc in (("nhtsa_18", load_scenario(SCENARIOS / "nhtsa_18_cut_in.yaml")), ("platoon_obstacle", platoon_scenario(10, obstacle=True, duration=10.0))):
        a = format_trace(run(sc, EngineConfig(workers=1))).encode()
        b = format_trace(run(sc, EngineConfig(workers=4))).encode()
        ok &= a == b
        parts.append(f"{name} {'identical' if a == b else 'DIFFERENT'} ({len(a)} bytes)")
    verdict(10, "determinism across planner threads", ok, ", ".join(parts))
