import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sdvsim.frenet import FrenetState, FrenetTrajectory, QuinticPoly, eval_trajectory
from sdvsim.params import Range
from sdvsim.planner import (
    COST_NAMES,
    ManeuverConfig,
    TargetState,
    check_feasibility,
    config_from_params,
    cost_components,
    fallback_stop,
    find_targets,
    generate_candidates,
    plan,
    rank_and_select,
)
from sdvsim.planner.core import disk_radius
from sdvsim.traffic import Actor, Prediction, TrafficSnapshot
from sdvsim.world_map import ReferencePath

PATH = ReferencePath([(0, 0), (200, 0), (400, 0)])


def snap(state=FrenetState(0.0, 10.0), actors=(), **kw):
    return TrafficSnapshot(0.0, 1, state, PATH, tuple(actors), **kw)


def const_actor(aid, s, v, d=0.0, kind="SDV"):
    st_ = FrenetState(s, v, 0.0, d)
    return Actor(aid, kind, st_, prediction=Prediction.constant(st_, 10.0))


def test_velocity_targets_uniform():
    cfg = ManeuverConfig("velocity_keeping", target_speed=Range.percent(14, 10), samples_per_param=6, horizon=Range(4, 4, 4))
    speeds = [t.state.s_dot for t in find_targets(cfg, snap())]
    assert speeds == pytest.approx(np.linspace(12.6, 15.4, 6))


def test_stop_targets():
    cfg = ManeuverConfig("stop", stop_point=50.0)
    targets = find_targets(cfg, snap(FrenetState(0.0, 5.0)))
    assert targets
    assert all((t.state.s, t.state.s_dot, t.state.s_ddot) == (50.0, 0.0, 0.0) for t in targets)


def test_merge_target_arithmetic():
    ego = const_actor(0, 10.0, 13.16, d=-3.5, kind="Ego")
    cfg = config_from_params("merge_in_front", {"target": "ego", "delta_s": (-5, -5), "target_lane_id": -1}, ego_id=0)
    s = snap(FrenetState(12.0, 14.0), [ego], lanes_right=1, ego_id=0)
    for t in find_targets(cfg, s):
        assert t.state.s == pytest.approx(10.0 + 13.16 * t.T + 4.5 - 5.0)
        assert t.state.s_dot == pytest.approx(8.16)
        assert t.state.d == pytest.approx(-3.5)


def test_identity_target_gives_constant_trajectory():
    start = FrenetState(5.0, 10.0, 0.0, 0.5, 0.0, 0.0)
    (traj,) = generate_candidates(start, [TargetState(FrenetState(25.0, 10.0, 0.0, 0.5), 2.0)])
    t = np.linspace(0, 2, 11)
    assert np.allclose(traj.s_poly.eval(t, 1), 10.0, atol=1e-12)
    assert np.allclose(traj.d_poly.eval(t), 0.5, atol=1e-12)


@given(st.lists(st.tuples(st.floats(1, 80), st.floats(0, 20), st.floats(-2, 2), st.floats(-3, 3), st.floats(1, 8)), min_size=1, max_size=8))
def test_candidate_endpoints_exact(specs):
    start = FrenetState(0.0, 8.0, 0.5, 0.2, 0.1, 0.0)
    targets = [TargetState(FrenetState(s, v, a, d), T) for s, v, a, d, T in specs]
    cands = generate_candidates(start, targets, t0=3.0)
    assert len(cands) == len(targets)
    for c, tg in zip(cands, targets):
        end = eval_trajectory(c, 3.0 + tg.T)
        assert np.allclose(end.as_tuple(), tg.state.as_tuple(), atol=1e-9 * max(1.0, abs(tg.state.s)))


def test_constant_speed_feasible():
    traj = FrenetTrajectory(QuinticPoly((0, 10, 0, 0, 0, 0)), QuinticPoly((0,) * 6), 4.0)
    assert check_feasibility(traj, snap()).feasible


def test_direction_inversion():
    traj = FrenetTrajectory(QuinticPoly((0, 2, -1, 0, 0, 0)), QuinticPoly((0,) * 6), 4.0)
    res = check_feasibility(traj, snap(), config=ManeuverConfig("velocity_keeping"))
    assert res.violation == "direction inversion"


def _disk_overlap_time(own_s, own_d, own_h, other_s, other_d, length, width, times):
    """First sample where any of the three disks of each footprint overlap."""
    r = disk_radius(width)
    for i, t in enumerate(times):
        for a in (-length / 3, 0, length / 3):
            for b in (-length / 3, 0, length / 3):
                dx = own_s[i] + a * math.cos(own_h[i]) - other_s[i] - b
                dy = own_d[i] + a * math.sin(own_h[i]) - other_d[i]
                if math.hypot(dx, dy) < 2 * r:
                    return t
    return None


def test_crossing_collision_with_ego():
    # swerve from the left lane onto a slower Ego in the right lane
    start = FrenetState(8.0, 14.0, 0.0, 0.0)
    (traj,) = generate_candidates(start, [TargetState(FrenetState(8.0 + 14 * 3, 14.0, 0, -3.5), 3.0)])
    ego = const_actor(0, 9.0, 13.16, d=-3.5, kind="Ego")
    s = snap(start, [ego], lanes_right=1, ego_id=0)
    res = check_feasibility(traj, s)
    times = np.round(np.arange(0, 3.0001, 0.1), 10)
    own_s, own_d = traj.s_poly.eval(times), traj.d_poly.eval(times)
    hdg = np.arctan2(traj.d_poly.eval(times, 1), traj.s_poly.eval(times, 1))
    expected = _disk_overlap_time(own_s, own_d, hdg, 9.0 + 13.16 * times, np.full_like(times, -3.5), 4.5, 1.8, times)
    assert res.violation == "collision" and res.actor == 0
    assert res.time == pytest.approx(expected)
    assert 1.0 <= res.time <= 1.4


def test_single_feasible_selected():
    cands = [
        FrenetTrajectory(QuinticPoly((0, 2, -1, 0, 0, 0)), QuinticPoly((0,) * 6), 4.0),
        FrenetTrajectory(QuinticPoly((0, 3, 0, 0, 0, 0)), QuinticPoly((0,) * 6), 4.0),
    ]
    res = rank_and_select(cands, snap(), ManeuverConfig("velocity_keeping"))
    assert res.best.index == 1


def test_efficiency_monotone():
    cfg = ManeuverConfig("velocity_keeping", target_speed=10.0, cost_weights=(0, 1, 0, 0, 0, 0))
    cands = [FrenetTrajectory(QuinticPoly((0, v, 0, 0, 0, 0)), QuinticPoly((0,) * 6), 3.0) for v in (5.0, 10.0)]
    assert rank_and_select(cands, snap(), cfg).best.index == 1


def _cut_in_snapshot():
    ego = const_actor(0, 0.0, 13.16, d=-3.5, kind="Ego")
    return snap(FrenetState(6.0, 14.0), [ego], lanes_right=1, ego_id=0)


def test_cut_in_grid_matches_exhaustive_minimum():
    cfg = config_from_params("cutin", {"target": "ego", "delta_s": (Range.between(2, 8), -3), "target_lane_id": -1, "samples_per_param": 6, "horizon": Range.between(2, 4), "horizon_samples": 3}, ego_id=0)
    res = plan(cfg, _cut_in_snapshot())
    assert len(res.ranking) == 18
    feasible = [rc for rc in res.ranking if rc.feasible]
    costs = [rc.cost for rc in feasible]
    oracle = feasible[int(np.argmin(costs))]
    assert res.best.index == oracle.index
    for rc in res.ranking:
        w = np.array(cfg.cost_weights)
        assert rc.cost == pytest.approx(float(w @ [rc.cost_breakdown[n] for n in COST_NAMES]))


def test_velocity_keeping_from_rest_has_no_lateral_motion():
    cfg = ManeuverConfig("velocity_keeping", target_speed=Range.percent(10, 10))
    res = plan(cfg, snap(FrenetState(0.0, 0.0)))
    traj = res.trajectory
    end = eval_trajectory(traj, traj.t_end)
    assert cfg.target_speed.contains(end.s_dot)
    assert np.allclose(traj.d_poly.coeffs, 0.0)


def test_following_gap():
    lead = const_actor(2, 60.0, 10.0)
    cfg = ManeuverConfig("vehicle_following", time_gap=Range.between(1.8, 2.2))
    res = plan(cfg, snap(FrenetState(20.0, 10.0), [lead]))
    traj = res.trajectory
    end = eval_trajectory(traj, traj.t_end)
    gap = 60.0 + 10.0 * traj.T - end.s - 4.5
    assert 18.0 - 1e-6 <= gap <= 22.0 + 1e-6


def test_emergency_cut_in_terminal_state():
    ego = const_actor(0, 0.0, 13.16, d=-3.5, kind="Ego")
    s = snap(FrenetState(8.0, 14.0), [ego], lanes_right=1, ego_id=0)
    cfg = config_from_params("cutin", {"target": "ego", "delta_s": (-5, -5), "target_lane_id": -1}, ego_id=0)
    traj = plan(cfg, s).trajectory
    end = eval_trajectory(traj, traj.t_end)
    ego_s = 13.16 * traj.T
    assert end.s - ego_s - 4.5 == pytest.approx(-5.0, abs=1e-9)
    assert end.s_dot - 13.16 == pytest.approx(-5.0, abs=1e-9)


def test_fallback_stop_respects_comfort():
    traj = fallback_stop(FrenetState(10.0, 12.0, 0.0, 0.4, 0.1), 4.0, t0=1.0)
    t = np.linspace(1.0, traj.t_end, 100)
    s, sd, sdd, *_ = traj.sample(t)
    assert np.all(sdd >= -4.0 - 1e-9)
    assert sd[-1] == pytest.approx(0.0, abs=1e-9)
    assert s[-1] == pytest.approx(10.0 + 12.0**2 / 8.0)


@given(st.floats(0, 20), st.floats(-1.5, 1.5), st.floats(5, 80), st.floats(-2, 2))
def test_selection_is_feasible(v0, d0, lead_s, lead_v):
    s = snap(FrenetState(0.0, v0, 0.0, d0), [const_actor(2, lead_s, max(0.0, 8 + lead_v))])
    res = plan(ManeuverConfig("velocity_keeping"), s)
    if res.best is not None:
        assert check_feasibility(res.best.trajectory, s, config=ManeuverConfig("velocity_keeping")).feasible


@given(st.integers(0, 5), st.floats(1.5, 20.0))
def test_weight_scaling_monotone(k, factor):
    base = ManeuverConfig("velocity_keeping", samples_per_param=4)
    s = snap(FrenetState(0.0, 8.0, 0.0, 0.6))
    before = plan(base, s)
    w = list(base.cost_weights)
    w[k] *= factor
    after = plan(base.with_params(cost_weights=tuple(w)), s)
    name = COST_NAMES[k]
    # the new winner never has a larger scaled component than the old one
    assert after.best.cost_breakdown[name] <= before.best.cost_breakdown[name] + 1e-12
