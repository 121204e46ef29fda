"""Simulation loop: fixed-rate state updates, fixed-rate replanning, events and timing."""

from __future__ import annotations

import math
import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from shapely.geometry import Polygon

from sdvsim.behavior.tree import Blackboard, Decision, tick
from sdvsim.frenet import (
    CartesianState,
    DomainError,
    FrenetState,
    FrenetTrajectory,
    QuinticPoly,
    TransformError,
    constant_velocity_trajectory,
    to_cartesian,
    to_cartesian_batch,
    to_frenet,
    wrap_angle,
)
from sdvsim.motion import Polyline, ProfileMotion, ReplayMotion, SpeedProfile
from sdvsim.planner.config import ManeuverConfig, config_from_params
from sdvsim.planner.core import PlanningError, check_feasibility, dump_candidates, fallback_stop, plan
from sdvsim.planner.targets import TargetError, target_actor
from sdvsim.scenario import AgentSpec, Scenario, evaluate_triggers, signal_state
from sdvsim.traffic import PREDICTION_DT, Actor, Prediction, SignalState, TrafficSnapshot
from sdvsim.world_map import RoutePlan, _polyline_project, build_route, fit_reference_path

GOAL_TOLERANCE = 3.0  # m of route left when a vehicle counts as arrived
PERCEPTION_RANGE = 150.0  # m
NEAR_RANGE = 30.0  # m, pairs closer than this have their clearance tracked


@dataclass(frozen=True)
class EngineConfig:
    tick_dt: float = 1.0 / 30.0
    plan_dt: float = 1.0 / 3.0
    mode: str = "lockstep"  # or "realtime"
    workers: int = 1
    comfort_decel: float = 4.0  # m/s^2, fallback stop
    replan_cycles: float = 2.0  # replan when less than this many plan periods remain
    prediction_horizon: float = 6.0  # s
    deviation_s: float = 1.0  # m, target/lead off its prediction by more than this triggers a replan
    deviation_v: float = 0.5  # m/s
    debug_candidates: bool = False

    def __post_init__(self):
        ratio = self.plan_dt / self.tick_dt
        if self.tick_dt <= 0 or abs(ratio - round(ratio)) > 1e-6 or round(ratio) < 1:
            raise ValueError("plan_dt must be a positive integer multiple of tick_dt")
        if self.mode not in ("lockstep", "realtime"):
            raise ValueError(f"unknown clock mode {self.mode!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class SimClock:
    tick_dt: float = 1.0 / 30.0
    plan_dt: float = 1.0 / 3.0
    mode: str = "lockstep"
    tick: int = 0

    @property
    def sim_time(self) -> float:
        return self.tick * self.tick_dt

    @property
    def plan_every(self) -> int:
        return int(round(self.plan_dt / self.tick_dt))

    def time_of(self, k: int) -> float:
        return k * self.tick_dt


@dataclass
class TimingLog:
    mode: str = "lockstep"
    tick_durations: list = field(default_factory=list)  # s, per vehicle per tick
    plan_durations: list = field(default_factory=list)  # s, per vehicle per cycle

    def merge(self, other: "TimingLog") -> None:
        self.tick_durations += other.tick_durations
        self.plan_durations += other.plan_durations


@dataclass(frozen=True)
class RateCompliance:
    trc: Optional[float]  # percent
    max_tick: Optional[float]
    tprc: Optional[float]
    max_plan: Optional[float]

    @property
    def applicable(self) -> bool:
        return self.trc is not None


NOT_APPLICABLE = RateCompliance(None, None, None, None)


def compute_rate_compliance(log: TimingLog, clock: SimClock) -> RateCompliance:
    """Share of ticks and plans finishing within their periods; lockstep logs are not applicable."""
    if log.mode != "realtime":
        return NOT_APPLICABLE

    def pct(xs, budget):
        if not xs:
            return 100.0, 0.0
        arr = np.asarray(xs)
        return 100.0 * float(np.mean(arr <= budget + 1e-9)), float(arr.max())

    trc, mt = pct(log.tick_durations, clock.tick_dt)
    tprc, mp = pct(log.plan_durations, clock.plan_dt)
    return RateCompliance(trc, mt, tprc, mp)


@dataclass(frozen=True)
class Event:
    time: float
    kind: str  # collision, maneuver, fallback, trigger, overrun, frozen, goal, end, plan_error
    vehicles: tuple = ()
    info: dict = field(default_factory=dict)


@dataclass
class ActiveTrajectory:
    traj: FrenetTrajectory
    path: object  # ReferencePath the trajectory lives in
    fallback: bool = False

    def state(self, t: float) -> FrenetState:
        """Trajectory state at ``t``; past the end the terminal velocity is held."""
        tr = self.traj
        if t <= tr.t_end + 1e-9:
            return tr.state_at(min(max(t, tr.t0), tr.t_end))
        end = tr.state_at(tr.t_end)
        dt = t - tr.t_end
        return FrenetState(end.s + end.s_dot * dt, end.s_dot, 0.0, end.d + end.d_dot * dt, end.d_dot, 0.0)


@dataclass
class VehicleRuntime:
    id: int
    kind: str  # SDV, PDT, Ego
    spec: AgentSpec
    length: float
    width: float
    active: bool = True
    cart: Optional[CartesianState] = None
    s: float = 0.0  # along the route / path, for the trace
    d: float = 0.0
    accel: float = 0.0
    trace: list = field(default_factory=list)  # (t, x, y, v, a, theta, s, d)
    polyline: Optional[Polyline] = None
    motion: object = None  # ProfileMotion / ReplayMotion for scripted agents
    external: bool = False
    # SDV only
    route: Optional[RoutePlan] = None
    active_traj: Optional[ActiveTrajectory] = None
    pending: Optional[tuple] = None  # (install tick, Future)
    blackboard: Blackboard = field(default_factory=Blackboard)
    root: object = None
    base_config: Optional[ManeuverConfig] = None
    decision: Optional[Decision] = None
    config: Optional[ManeuverConfig] = None
    watch: Optional[tuple] = None  # (actor id, snapshot time, Prediction) for the deviation check
    rng: Optional[np.random.Generator] = None
    frozen: bool = False
    overrun_flagged: bool = False
    arrived: bool = False
    goal_s: float = 0.0
    stop_lines: tuple = ()
    executed: set = field(default_factory=set)  # uids of tree nodes ticked at least once

    @property
    def is_sdv(self) -> bool:
        return self.root is not None

    @property
    def speed(self) -> float:
        return self.cart.speed if self.cart else 0.0


@dataclass
class SimulationResult:
    scenario: str
    traces: dict  # vehicle id -> list of rows
    events: list
    timing: TimingLog
    ticks: int
    plan_cycles: int
    end_reason: str
    min_gaps: dict  # (a, b) -> smallest footprint clearance, m
    clock: SimClock
    executed: dict = field(default_factory=dict)  # vehicle id -> node uids ticked during the run
    candidates: list = field(default_factory=list)  # JSON-lines blocks, one per plan, when requested

    def collisions(self) -> list:
        return [e for e in self.events if e.kind == "collision"]

    def compliance(self) -> RateCompliance:
        return compute_rate_compliance(self.timing, self.clock)


# ---------------------------------------------------------------------------
# geometry helpers


def _cartesian(x, y, theta, v, a) -> CartesianState:
    c, s = math.cos(theta), math.sin(theta)
    return CartesianState(x, v * c, a * c, y, v * s, a * s, wrap_angle(theta))


def _footprint(v: VehicleRuntime) -> Polygon:
    c = v.cart
    ct, st = math.cos(c.theta), math.sin(c.theta)
    hl, hw = v.length / 2.0, v.width / 2.0
    return Polygon([(c.x + dx * ct - dy * st, c.y + dx * st + dy * ct) for dx, dy in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw))])


def project_extended(path, pts: np.ndarray):
    """Project onto ``path``, extending it along its end tangents."""
    s, d = path.project(pts)
    s, d = np.atleast_1d(s).astype(float), np.atleast_1d(d).astype(float)
    pts = np.atleast_2d(pts)
    for end, sel in ((0.0, s <= 1e-9), (path.length, s >= path.length - 1e-9)):
        if np.any(sel):
            p0, t0, _, _, _ = path.frame(np.array([end]))
            rel = pts[sel] - p0[0]
            along = rel @ t0[0]
            s[sel] = end + along
            d[sel] = t0[0, 0] * rel[:, 1] - t0[0, 1] * rel[:, 0]
    return s, d


def frenet_to_cartesian(fs: FrenetState, path) -> CartesianState:
    """Like ``to_cartesian`` but continues straight along the end tangents past either path end."""
    if -1e-9 <= fs.s <= path.length + 1e-9:
        return to_cartesian(fs, path)
    end = 0.0 if fs.s < 0.0 else path.length
    p, t, hd, _, _ = path.frame(np.array([end]))
    p, t, hd = p.reshape(2), t.reshape(2), float(np.ravel(hd)[0])
    n = np.array([-t[1], t[0]])
    pos = p + (fs.s - end) * t + fs.d * n
    vel = fs.s_dot * t + fs.d_dot * n
    acc = fs.s_ddot * t + fs.d_ddot * n
    theta = hd if math.hypot(*vel) < 1e-3 else math.atan2(vel[1], vel[0])
    return CartesianState(float(pos[0]), float(vel[0]), float(acc[0]), float(pos[1]), float(vel[1]), float(acc[1]), wrap_angle(theta))


def _window(speed: float, config: EngineConfig, horizon_hi: float) -> float:
    ahead = max(speed, 15.0) * (horizon_hi + config.replan_cycles * config.plan_dt + 1.0) + 10.0
    return 2.0 * max(50.0, 2.0 * ahead)


# ---------------------------------------------------------------------------
# world


class World:
    """Vehicles, clock and bookkeeping for one scenario run."""

    def __init__(self, scenario: Scenario, config: EngineConfig = EngineConfig(), seed: Optional[int] = None):
        self.scenario = scenario
        self.config = config
        self.clock = SimClock(config.tick_dt, config.plan_dt, config.mode)
        self.seed = scenario.seed if seed is None else seed
        self.map = scenario.map
        self.ego_id = scenario.ego.id
        self.events: list[Event] = []
        self.timing = TimingLog(config.mode)
        self.min_gaps: dict = {}
        self.collided: set = set()
        self.fired: set = set()
        self.plan_cycles = 0
        self.end_requested = False
        self.debug_lines: list[str] = []
        self.external_state: Optional[tuple] = None  # (x, y, theta, v, a) for an external Ego
        self.vehicles: dict[int, VehicleRuntime] = {}
        for spec in sorted(scenario.agents, key=lambda a: a.id):
            self.vehicles[spec.id] = self._make_vehicle(spec)
        for v in self.vehicles.values():
            if v.active:
                self._start(v, 0.0)

    # setup -----------------------------------------------------------------
    def _make_vehicle(self, spec: AgentSpec) -> VehicleRuntime:
        v = VehicleRuntime(spec.id, "SDV" if spec.is_sdv else spec.kind, spec, spec.length, spec.width, active=spec.active)
        if spec.is_sdv:
            sc = self.scenario
            v.root = sc.library.instantiate(spec.tree, spec.params)
            v.base_config = sc.base_config(spec)
            v.route = build_route(self.map, spec.route)
            v.rng = np.random.default_rng([self.seed, spec.id])
        elif spec.script.get("type") == "replay":
            v.motion = ReplayMotion(spec.script["samples"])
            pts = [r[1:3] for r in spec.script["samples"]]
            v.polyline = Polyline(pts) if len(spec.route) < 2 else Polyline(spec.route)
        else:
            v.polyline = Polyline(spec.route)
            v.external = spec.script.get("type") == "external"
        return v

    def _start(self, v: VehicleRuntime, t: float) -> None:
        v.active = True
        spec = v.spec
        if v.is_sdv:
            start = np.asarray(spec.route[0], float)
            path = fit_reference_path(v.route, start, _window(spec.speed, self.config, v.base_config.horizon.hi))
            s, _ = path.project(start)
            theta = float(path.heading(s))
            v.cart = _cartesian(float(start[0]), float(start[1]), theta, spec.speed, 0.0)
            fs = to_frenet(v.cart, path)
            v.active_traj = ActiveTrajectory(constant_velocity_trajectory(fs, 3.0 * self.config.plan_dt, t), path)
            self._refresh_route_info(v, path)
            v.s, v.d = path.origin_s + fs.s, fs.d
        elif isinstance(v.motion, ReplayMotion):
            self._set_scripted(v, *v.motion.state(t))
        else:
            s0, _ = v.polyline.project(spec.route[0])
            v.motion = ProfileMotion(v.polyline, spec.speed_profile(), s0, t)
            x, y, th, sp, a, s = v.motion.state(t)
            v.cart, v.s, v.d, v.accel = _cartesian(x, y, th, sp, a), s, 0.0, a
        v.trace.append(self._row(v, t))

    def _refresh_route_info(self, v: VehicleRuntime, path) -> None:
        g, _, _ = _polyline_project(v.route.path_array, np.asarray(v.route.goal))
        v.goal_s = g
        lines = []
        for sid in dict.fromkeys(v.route.segment_ids):
            seg = self.map.segments[sid]
            if seg.stop_line is None:
                continue
            sl, dist, _ = _polyline_project(v.route.path_array, np.asarray(seg.stop_line))
            if dist < seg.width:
                lines.append((sl, seg.signal))
        v.stop_lines = tuple(sorted(lines, key=lambda x: x[0]))

    def _row(self, v: VehicleRuntime, t: float) -> tuple:
        c = v.cart
        return (t, c.x, c.y, c.speed, v.accel, c.theta, v.s, v.d)

    def _set_scripted(self, v: VehicleRuntime, x, y, theta, speed, accel) -> None:
        v.cart = _cartesian(x, y, theta, speed, accel)
        v.accel = accel
        v.s, v.d = v.polyline.project((x, y))

    def set_external_initial(self, v: VehicleRuntime, state: tuple) -> None:
        """Replace an externally driven vehicle's start state (before the first tick)."""
        self._set_scripted(v, *state)
        if v.trace and v.trace[-1][0] == self.clock.sim_time:
            v.trace[-1] = self._row(v, self.clock.sim_time)

    # per-tick ----------------------------------------------------------------
    def active_vehicles(self) -> list[VehicleRuntime]:
        return [v for v in self.vehicles.values() if v.active]

    def positions(self) -> dict:
        return {v.id: (v.cart.x, v.cart.y) for v in self.active_vehicles()}

    def emit(self, kind: str, vehicles=(), **info) -> None:
        self.events.append(Event(round(self.clock.sim_time, 9), kind, tuple(vehicles), info))

    def signals_at(self, t: float) -> dict:
        return {sid: SignalState(*signal_state(sched, t)) for sid, sched in self.scenario.signals.items()}

    def apply_action(self, trigger: str, action: dict) -> None:
        t = self.clock.sim_time
        if "activate" in action:
            v = self.vehicles[action["activate"]]
            if not v.active:
                self._start(v, t)
        elif "switch_profile" in action:
            sp = action["switch_profile"]
            v = self.vehicles[sp["agent"]]
            if isinstance(v.motion, ProfileMotion):
                v.motion.switch(SpeedProfile(v.spec.profiles[sp["profile"]]), t)
        elif action.get("end"):
            self.end_requested = True
        self.emit("trigger", (), name=trigger, action=action)


def _advance_vehicle(world: World, v: VehicleRuntime, t: float) -> None:
    if v.is_sdv:
        if v.frozen:
            return
        at = v.active_traj
        if t > at.traj.t_end + 1e-9 and not v.overrun_flagged:
            v.overrun_flagged = True
            world.emit("overrun", (v.id,), t_end=round(at.traj.t_end, 6))
        try:
            fs = at.state(t)
            v.cart = frenet_to_cartesian(fs, at.path)
        except (TransformError, DomainError) as exc:
            v.frozen = True
            v.cart = replace(v.cart, x_dot=0.0, y_dot=0.0, x_ddot=0.0, y_ddot=0.0)
            world.emit("frozen", (v.id,), error=str(exc))
            return
        v.s, v.d = at.path.origin_s + fs.s, fs.d
        heading = math.atan2(v.cart.y_dot, v.cart.x_dot) if v.cart.speed > 1e-3 else v.cart.theta
        v.accel = v.cart.x_ddot * math.cos(heading) + v.cart.y_ddot * math.sin(heading)
        if not v.arrived and v.goal_s - v.s <= GOAL_TOLERANCE:
            v.arrived = True
            world.emit("goal", (v.id,))
    elif v.external:
        if world.external_state is not None:
            world._set_scripted(v, *world.external_state)
        else:  # no update from the peer: keep going at constant velocity
            c = v.cart
            world._set_scripted(v, c.x + c.x_dot * world.clock.tick_dt, c.y + c.y_dot * world.clock.tick_dt, c.theta, c.speed, 0.0)
    elif isinstance(v.motion, ReplayMotion):
        world._set_scripted(v, *v.motion.state(t))
    else:
        x, y, th, sp, a, s = v.motion.state(t)
        v.cart, v.s, v.d, v.accel = _cartesian(x, y, th, sp, a), s, 0.0, a
        if not v.arrived and s >= v.polyline.length - 1e-9 and v.kind != "Ego":
            v.arrived = True
            world.emit("goal", (v.id,))


def _install(world: World, v: VehicleRuntime, job) -> None:
    v.blackboard = job.blackboard
    v.watch = job.watch
    v.executed |= job.executed
    if job.debug:
        world.debug_lines.append(job.debug)
    for kind, info in job.events:
        world.emit(kind, (v.id,), **info)
    if job.decision is not None:
        v.decision, v.config = job.decision, job.config
    if job.trajectory is not None:
        v.active_traj = job.trajectory
        v.overrun_flagged = False
    if job.path_changed:
        world._refresh_route_info(v, job.trajectory.path)


def tick_all(world: World) -> None:
    """Advance the clock one tick and move every active vehicle, in id order."""
    clock = world.clock
    clock.tick += 1
    t = clock.sim_time
    realtime = clock.mode == "realtime"
    for v in world.active_vehicles():
        if v.pending is not None and v.pending[0] <= clock.tick:
            job = v.pending[1].result()
            v.pending = None
            _install(world, v, job)
    started = getattr(world, "_tick_scheduled", None)
    for v in world.active_vehicles():
        _advance_vehicle(world, v, t)
        v.trace.append(world._row(v, t))
        if realtime and started is not None:
            world.timing.tick_durations.append(time.perf_counter() - started)
    _check_contacts(world)


def _check_contacts(world: World) -> None:
    vs = world.active_vehicles()
    polys = {}
    for i, a in enumerate(vs):
        for b in vs[i + 1:]:
            dist = math.hypot(a.cart.x - b.cart.x, a.cart.y - b.cart.y)
            reach = 0.5 * (math.hypot(a.length, a.width) + math.hypot(b.length, b.width))
            if dist > reach + NEAR_RANGE:
                continue
            pa = polys.setdefault(a.id, _footprint(a))
            pb = polys.setdefault(b.id, _footprint(b))
            gap = pa.distance(pb)
            key = (a.id, b.id)
            world.min_gaps[key] = min(world.min_gaps.get(key, math.inf), gap)
            if gap <= 0.0 and pa.intersects(pb) and key not in world.collided:
                world.collided.add(key)
                rel = math.hypot(a.cart.x_dot - b.cart.x_dot, a.cart.y_dot - b.cart.y_dot)
                world.emit("collision", key, relative_speed=round(rel, 6))


# ---------------------------------------------------------------------------
# traffic state estimation


@dataclass(frozen=True)
class _Published:
    """Predicted Cartesian motion of one vehicle from the current plan time."""

    id: int
    kind: str
    length: float
    width: float
    times: np.ndarray  # relative to the plan time
    xy: np.ndarray
    vel: np.ndarray


def _publish(world: World, v: VehicleRuntime, horizon: float) -> _Published:
    """Prediction sampled from the next plan boundary onwards; ``times`` are relative to that boundary."""
    t_now = world.clock.sim_time
    lead = world.config.plan_dt
    rel = lead + np.arange(0.0, horizon + 1e-9, PREDICTION_DT)
    if v.is_sdv and not v.frozen:
        at = v.active_traj
        states = [at.state(t_now + r) for r in rel]
        s = np.array([st.s for st in states])
        sd = np.array([st.s_dot for st in states])
        d = np.array([st.d for st in states])
        dd = np.array([st.d_dot for st in states])
        xy, vel = to_cartesian_batch(at.path, s, sd, d, dd)
        # beyond the path end positions clamp; extend them at the terminal velocity
        over = s > at.path.length
        if np.any(over):
            xy[over] = np.array([frenet_to_cartesian(st, at.path).position for st, o in zip(states, over) if o])
    elif isinstance(v.motion, ProfileMotion) and v.kind == "PDT":
        rows = [v.motion.state(t_now + r) for r in rel]
        xy = np.array([[r[0], r[1]] for r in rows])
        vel = np.array([[r[3] * math.cos(r[2]), r[3] * math.sin(r[2])] for r in rows])
    elif v.polyline is not None and v.speed > 1e-6 and not v.frozen:
        # constant acceleration along the vehicle's own path, holding still once stopped
        a = v.accel
        t_stop = v.speed / -a if a < -1e-9 else np.inf
        tt = np.minimum(rel, t_stop)
        dist = v.speed * tt + 0.5 * a * tt * tt
        speed = np.maximum(v.speed + a * tt, 0.0)
        pts, dirs = v.polyline.at(v.s + dist)
        xy, vel = pts, dirs * speed[:, None]
    else:
        c = v.cart
        xy = np.array([c.x, c.y]) + rel[:, None] * np.array([c.x_dot, c.y_dot])
        vel = np.tile([c.x_dot, c.y_dot], (len(rel), 1))
    return _Published(v.id, "Ego" if v.id == world.ego_id else v.kind, v.length, v.width, rel - lead, np.asarray(xy), np.asarray(vel))


def _actor_in_frame(pub: _Published, path) -> Actor:
    times, xy, vel = pub.times, pub.xy, pub.vel
    s, d = project_extended(path, xy)
    _, tan, hd, _, _ = path.frame(np.clip(s, 0.0, path.length))
    sd = np.einsum("ij,ij->i", vel, tan)
    dd = tan[:, 0] * vel[:, 1] - tan[:, 1] * vel[:, 0]
    speed = np.hypot(vel[:, 0], vel[:, 1])
    heading = np.where(speed > 1e-3, np.arctan2(vel[:, 1], vel[:, 0]) - hd, 0.0)
    heading = np.arctan2(np.sin(heading), np.cos(heading))
    pred = Prediction(times, s, sd, d, dd, heading)
    state = FrenetState(float(s[0]), float(sd[0]), 0.0, float(d[0]), float(dd[0]), 0.0)
    return Actor(pub.id, pub.kind, state, pub.length, pub.width, pred, float(heading[0]))


@dataclass
class _PlanInput:
    vehicle: VehicleRuntime
    snapshot: TrafficSnapshot
    own_state: FrenetState
    path: object
    path_changed: bool
    t_install: float


def build_snapshot(world: World, v: VehicleRuntime, published: dict) -> _PlanInput:
    """Predicted traffic state at the next plan boundary, in ``v``'s Frenet frame."""
    cfg = world.config
    t_install = world.clock.sim_time + cfg.plan_dt
    at = v.active_traj
    own = at.state(t_install)
    path, changed = at.path, False
    hi = (v.base_config.horizon.hi if v.base_config else 5.0)
    need = max(own.s_dot, 15.0) * (hi + cfg.replan_cycles * cfg.plan_dt + 1.0) + 10.0
    route_end = v.route.length
    if own.s + need > path.length and path.origin_s + path.length < route_end - 1e-6:
        cart = to_cartesian(own, path)
        path = fit_reference_path(v.route, (cart.x, cart.y), _window(own.s_dot, cfg, hi))
        own = to_frenet(cart, path)
        changed = True
    # lanes: around the route lane at the vehicle's position along the path
    pt = path.point(np.clip(own.s, 0.0, path.length))
    try:
        sid, _, _ = world.map.locate(pt)
        seg = world.map.segments[sid]
        n_left, n_right = world.map.neighbor_lanes(sid)
        lane_w, speed_limit = seg.width, seg.speed_limit
    except Exception:  # off-map point (path extension): single lane
        n_left, n_right, lane_w, speed_limit = 0, 0, 3.5, 13.9
    me = (float(pt[0]), float(pt[1]))
    actors = []
    for pub in published.values():
        if pub.id == v.id:
            continue
        p = pub.xy[0]
        if math.hypot(p[0] - me[0], p[1] - me[1]) > PERCEPTION_RANGE:
            continue
        actors.append(_actor_in_frame(pub, path))
    snap = TrafficSnapshot(
        timestamp=t_install,
        vehicle_id=v.id,
        state=own,
        path=path,
        actors=tuple(actors),
        length=v.length,
        width=v.width,
        lane_width=lane_w,
        lanes_left=n_left,
        lanes_right=n_right,
        signals=world.signals_at(t_install),
        goal_s=v.goal_s - path.origin_s,
        stop_lines=tuple((s - path.origin_s, sig) for s, sig in v.stop_lines),
        ego_id=world.ego_id,
        speed_limit=speed_limit,
    )
    return _PlanInput(v, snap, own, path, changed, t_install)


# ---------------------------------------------------------------------------
# planning


@dataclass
class _JobResult:
    blackboard: Blackboard
    decision: Optional[Decision]
    config: Optional[ManeuverConfig]
    trajectory: Optional[ActiveTrajectory]
    path_changed: bool
    events: list
    watch: Optional[tuple]
    debug: str = ""
    executed: frozenset = frozenset()


def _remainder(traj: FrenetTrajectory, t: float) -> Optional[FrenetTrajectory]:
    """The part of ``traj`` after ``t`` as a trajectory starting at ``t``."""
    rest = traj.t_end - t
    if rest <= 1e-6:
        return None
    dt = t - traj.t0

    def shift(p: QuinticPoly) -> QuinticPoly:
        P = np.polynomial.Polynomial(p.coeffs)
        Q = P(np.polynomial.Polynomial([dt, 1.0]))
        c = list(Q.coef) + [0.0] * (6 - len(Q.coef))
        return QuinticPoly(tuple(float(x) for x in c[:6]))

    return FrenetTrajectory(shift(traj.s_poly), shift(traj.d_poly), rest, t)


def _watched_actor(config: ManeuverConfig, snap: TrafficSnapshot):
    try:
        return target_actor(config, snap)
    except TargetError:
        return None


def plan_vehicle(inp: _PlanInput, cfg: EngineConfig, debug: bool) -> _JobResult:
    """Tick the vehicle's tree and replan if needed. Pure apart from the vehicle's rng."""
    v, snap = inp.vehicle, inp.snapshot
    bb = v.blackboard.copy()
    res = tick(v.root, snap, bb)
    events = []
    decision = res.decision if res.decision is not None else v.decision
    config = v.config
    changed = decision is not None and (v.decision is None or (decision.maneuver, decision.params) != (v.decision.maneuver, v.decision.params))
    if changed:
        try:
            config = config_from_params(decision.maneuver, decision.param_dict, v.base_config, ego_id=snap.ego_id)
        except (ValueError, TypeError) as exc:
            events.append(("plan_error", {"error": str(exc)}))
            config = None
        events.append(("maneuver", {"from": v.decision.maneuver if v.decision else None, "to": decision.maneuver, "node": decision.node}))
    at = v.active_traj
    reasons = []
    if changed:
        reasons.append("decision")
    if inp.path_changed:
        reasons.append("path")
    if at.fallback:
        reasons.append("fallback")
    if at.traj.t_end - inp.t_install < cfg.replan_cycles * cfg.plan_dt - 1e-9:
        reasons.append("expiring")
    watch = None
    if config is not None:
        actor = _watched_actor(config, snap)
        if actor is not None:
            watch = (actor.id, snap.timestamp, actor.prediction)
            if not reasons:
                if v.watch is None or v.watch[0] != actor.id:
                    reasons.append("new target")
                else:
                    ps, pv, _, _ = v.watch[2].at(snap.timestamp - v.watch[1])
                    if abs(ps - actor.state.s) > cfg.deviation_s or abs(pv - actor.state.s_dot) > cfg.deviation_v:
                        reasons.append("deviation")
        if not reasons:
            rest = _remainder(at.traj, inp.t_install)
            if rest is None or not check_feasibility(rest, snap, config.limits, None, config):
                reasons.append("invalid")
    if decision is None or config is None:
        if not reasons:
            return _JobResult(bb, decision, config, None, False, events, watch, executed=res.executed)
        traj = fallback_stop(inp.own_state, cfg.comfort_decel, inp.t_install)
        events.append(("fallback", {"reason": "no decision"}))
        return _JobResult(bb, decision, config, ActiveTrajectory(traj, inp.path, True), inp.path_changed, events, watch, executed=res.executed)
    if not reasons:
        return _JobResult(bb, decision, config, None, False, events, watch, executed=res.executed)
    dbg = ""
    try:
        result = plan(config, snap, v.rng)
        if debug:
            dbg = dump_candidates(result, v.id, snap.timestamp)
        best = result.trajectory
    except (TargetError, PlanningError, DomainError, ValueError) as exc:
        events.append(("plan_error", {"error": str(exc)}))
        best = None
    if best is None:
        traj = fallback_stop(inp.own_state, cfg.comfort_decel, inp.t_install)
        events.append(("fallback", {"reason": "no feasible trajectory"}))
        return _JobResult(bb, decision, config, ActiveTrajectory(traj, inp.path, True), inp.path_changed, events, watch, dbg, res.executed)
    return _JobResult(bb, decision, config, ActiveTrajectory(best, inp.path), inp.path_changed, events, watch, dbg, res.executed)


class _Inline:
    """Executor stand-in that runs jobs immediately."""

    def submit(self, fn, *args) -> Future:
        f: Future = Future()
        try:
            f.set_result(fn(*args))
        except BaseException as exc:  # surfaced by .result()
            f.set_exception(exc)
        return f

    def shutdown(self, wait: bool = True) -> None:
        pass


def plan_cycle(world: World, executor) -> None:
    """Snapshot the world, then tick and plan every SDV for installation one plan period later."""
    cfg = world.config
    clock = world.clock
    world.plan_cycles += 1
    sdvs = [v for v in world.active_vehicles() if v.is_sdv and not v.frozen]
    if not sdvs:
        return
    published = {v.id: _publish(world, v, cfg.prediction_horizon) for v in world.active_vehicles()}
    install_tick = clock.tick + clock.plan_every
    realtime = clock.mode == "realtime"
    cycle_start = time.perf_counter()
    for v in sdvs:
        inp = build_snapshot(world, v, published)
        if realtime:
            fut = executor.submit(_timed, plan_vehicle, inp, cfg, cfg.debug_candidates, world.timing, cycle_start)
        else:
            fut = executor.submit(plan_vehicle, inp, cfg, cfg.debug_candidates)
        v.pending = (install_tick, fut)


def _timed(fn, inp, cfg, debug, timing: TimingLog, start: float):
    out = fn(inp, cfg, debug)
    timing.plan_durations.append(time.perf_counter() - start)
    return out


# ---------------------------------------------------------------------------
# run loop


def _end_reason(world: World) -> Optional[str]:
    sc = world.scenario
    if world.end_requested:
        return "trigger"
    if sc.end.collision and world.collided:
        return "collision"
    if sc.end.goal and all(world.vehicles[g].arrived for g in sc.end.goal):
        return "goal"
    if world.clock.sim_time >= sc.end.timeout - 1e-9:
        return "timeout"
    return None


def run(
    scenario: Scenario,
    config: EngineConfig = EngineConfig(),
    seed: Optional[int] = None,
    until: Optional[float] = None,
    on_tick: Optional[Callable[[World], None]] = None,
    before_tick: Optional[Callable[[World], None]] = None,
) -> SimulationResult:
    """Run ``scenario`` to its end condition (or ``until`` seconds, whichever is first)."""
    if until is not None:
        scenario = _with_timeout(scenario, until)
    world = World(scenario, config, seed)
    return run_world(world, on_tick=on_tick, before_tick=before_tick)


def _with_timeout(scenario: Scenario, until: float) -> Scenario:
    sc = replace(scenario)
    sc.end = replace(scenario.end, timeout=until)
    return sc


class Session:
    """Tick-by-tick driver of a world; ``run_world`` and the co-simulation server both use it."""

    def __init__(self, world: World):
        cfg = world.config
        self.world = world
        self.executor = _Inline() if (cfg.workers == 1 and cfg.mode == "lockstep") else ThreadPoolExecutor(max_workers=cfg.workers)
        self.wall0 = time.perf_counter()
        self.reason: Optional[str] = None
        self._result: Optional[SimulationResult] = None

    def step(self, before_tick=None) -> Optional[str]:
        """Advance one tick. Returns the end reason instead when the run is over."""
        world, clock = self.world, self.world.clock
        if self.reason:
            return self.reason
        for name, action in evaluate_triggers(world.scenario, world.positions(), clock.sim_time, world.fired):
            world.apply_action(name, action)
        self.reason = _end_reason(world)
        if self.reason:
            return self.reason
        if clock.tick % clock.plan_every == 0:
            plan_cycle(world, self.executor)
        if before_tick is not None:
            before_tick(world)
        if clock.mode == "realtime":
            scheduled = self.wall0 + (clock.tick + 1) * clock.tick_dt
            delay = scheduled - time.perf_counter()
            if delay > 0:
                time.sleep(delay)
            world._tick_scheduled = scheduled
        tick_all(world)
        return None

    def close(self, reason: Optional[str] = None) -> SimulationResult:
        if self._result is not None:
            return self._result
        world = self.world
        for v in world.vehicles.values():
            if v.pending is not None:
                v.pending[1].cancel()
        self.executor.shutdown(wait=True)
        self.reason = self.reason or reason
        world.emit("end", (), reason=self.reason)
        self._result = SimulationResult(
            world.scenario.name,
            {v.id: v.trace for v in world.vehicles.values() if v.trace},
            world.events,
            world.timing,
            world.clock.tick,
            world.plan_cycles,
            self.reason,
            dict(world.min_gaps),
            world.clock,
            {v.id: frozenset(v.executed) for v in world.vehicles.values() if v.is_sdv},
            list(world.debug_lines),
        )
        return self._result


def run_world(world: World, on_tick=None, before_tick=None) -> SimulationResult:
    session = Session(world)
    try:
        while session.step(before_tick) is None:
            if on_tick is not None:
                on_tick(world)
    finally:
        result = session.close()
    return result


# ---------------------------------------------------------------------------
# output

TRACE_HEADER = "sim_time,id,x,y,v,a,theta,s,d"


def format_trace(result: SimulationResult) -> str:
    rows = []
    for vid in sorted(result.traces):
        for t, x, y, v, a, th, s, d in result.traces[vid]:
            rows.append((t, vid, f"{t:.6f},{vid},{x:.6f},{y:.6f},{v:.6f},{a:.6f},{th:.6f},{s:.6f},{d:.6f}"))
    rows.sort(key=lambda r: (r[0], r[1]))
    return TRACE_HEADER + "\n" + "\n".join(r[2] for r in rows) + "\n"


def format_events(result: SimulationResult) -> str:
    import json

    lines = []
    for e in result.events:
        lines.append(json.dumps({"time": round(e.time, 6), "kind": e.kind, "vehicles": list(e.vehicles), **e.info}, sort_keys=True, default=str))
    return "\n".join(lines) + ("\n" if lines else "")


def format_timing(result: SimulationResult) -> str:
    rc = result.compliance()
    lines = ["kind,duration_s"]
    lines += [f"tick,{d:.6f}" for d in result.timing.tick_durations]
    lines += [f"plan,{d:.6f}" for d in result.timing.plan_durations]
    if rc.applicable:
        lines.append(f"# TRC={rc.trc:.2f}% max_tick={rc.max_tick:.3f}s TPRC={rc.tprc:.2f}% max_plan={rc.max_plan:.3f}s")
    else:
        lines.append("# rate compliance: n/a (lockstep)")
    return "\n".join(lines) + "\n"
