"""Tree library linking and tick semantics."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional

from sdvsim.behavior.dsl import BTNode, DSLError, TreeDef
from sdvsim.params import Range, Symbol
from sdvsim.planner.config import DISCRETE, PARAM_KEYS, canonical_maneuver
from sdvsim.traffic import TrafficSnapshot

SUCCESS, FAILURE, RUNNING = "success", "failure", "running"
LANE_REACHED_TOL = 0.3  # m and m/s
COMMON_CONDITION_PARAMS = {"negate": False, "latch": False}


class LinkError(DSLError):
    """Raised when trees cannot be linked into a library."""


class TickFault(RuntimeError):
    """Unresolved structure reached during a tick; a programming error."""


@dataclass
class Blackboard:
    """Per-vehicle memory that survives between ticks."""

    timers: dict = field(default_factory=dict)
    latches: set = field(default_factory=set)
    maneuvers: dict = field(default_factory=dict)
    running: set = field(default_factory=set)
    data: dict = field(default_factory=dict)

    def copy(self) -> "Blackboard":
        return copy.deepcopy(self)


@dataclass(frozen=True)
class Decision:
    maneuver: str
    params: tuple  # sorted (key, value) pairs
    node: str

    @property
    def param_dict(self) -> dict:
        return dict(self.params)


@dataclass(frozen=True)
class TickResult:
    status: str
    decision: Optional[Decision] = None
    executed: frozenset = frozenset()
    evaluated: tuple = ()


# condition vocabulary ------------------------------------------------------

@dataclass(frozen=True)
class ConditionSpec:
    fn: Callable
    params: dict


CONDITIONS: dict[str, ConditionSpec] = {}


def register_condition(name: str, **defaults):
    """Decorator adding a condition ``fn(snapshot, params, memory) -> bool``."""

    def deco(fn):
        CONDITIONS[name] = ConditionSpec(fn, dict(defaults))
        return fn

    return deco


def resolve_actor(snapshot: TrafficSnapshot, target):
    if isinstance(target, Symbol):
        target = target.name
    if target == "ego":
        target = snapshot.ego_id
    return snapshot.actor(target) if target is not None else None


def _in_range(value: float, spec) -> bool:
    if isinstance(spec, Range):
        return spec.contains(value)
    return value >= float(spec)


@register_condition("reached_goal", margin=5.0, decel=3.0)
def _reached_goal(snap, p, mem):
    if snap.goal_s is None:
        return False
    v = max(snap.state.s_dot, 0.0)
    return snap.goal_s - snap.state.s <= float(p["margin"]) + v * v / (2.0 * float(p["decel"]))


@register_condition("lead_vehicle_exists", distance=60.0)
def _lead_exists(snap, p, mem):
    return snap.lead_vehicle(float(p["distance"])) is not None


def _gap(snap, p, mem):
    actor = resolve_actor(snap, p["target"])
    if actor is None:
        return False
    if not snap.in_lane(actor, snap.own_lane + int(p["target_lane_id"])):
        return False
    half = 0.5 * (actor.length + snap.length)
    ds = snap.state.s - actor.state.s  # rear gap: actor behind us
    if p["side"] == "front":
        ds = -ds
    return _in_range(ds - half, p["range"])


register_condition("gap_to", target=Symbol("ego"), range=Range.between(0.0, 1e9), target_lane_id=0, side="rear")(_gap)
register_condition("gap", target=Symbol("ego"), range=Range.between(0.0, 1e9), target_lane_id=0, side="rear")(_gap)


@register_condition("sim_time_elapsed", t=0.0)
def _time_elapsed(snap, p, mem):
    return snap.timestamp >= float(p["t"]) - 1e-9


@register_condition("lane_occupied", target_lane_id=-1, distance=10.0)
def _lane_occupied(snap, p, mem):
    lane = snap.own_lane + int(p["target_lane_id"])
    return any(snap.in_lane(a, lane) and abs(snap.gap_to(a)) <= float(p["distance"]) for a in snap.actors)


@register_condition("signal_stop_required", distance=60.0, resume_delay=0.0)
def _signal_stop(snap, p, mem):
    nxt = snap.next_stop_line(float(p["distance"]))
    if nxt is None or nxt[1] is None or nxt[1] not in snap.signals:
        return False
    sig = snap.signals[nxt[1]]
    if sig.phase in ("red", "yellow"):
        return True
    return sig.since < float(p["resume_delay"]) and snap.state.s_dot < 0.5


@register_condition("lead_speed_below", distance=60.0, speed=1.0)
def _lead_slow(snap, p, mem):
    lead = snap.lead_vehicle(float(p["distance"]))
    return lead is not None and lead.state.s_dot < float(p["speed"])


@register_condition("stop_line_ahead", distance=30.0)
def _stop_line(snap, p, mem):
    return snap.next_stop_line(float(p["distance"])) is not None


@register_condition("speed_below", speed=0.5)
def _speed_below(snap, p, mem):
    return snap.state.s_dot < float(p["speed"])


# linking ---------------------------------------------------------------------

def _substitute(value, scope: Mapping):
    if isinstance(value, Symbol) and value.name in scope:
        return scope[value.name]
    if isinstance(value, tuple):
        return tuple(_substitute(v, scope) for v in value)
    return value


@dataclass
class TreeLibrary:
    trees: dict[str, TreeDef]
    provenance: dict[str, str]
    usage: dict[str, int] = field(default_factory=dict)

    def closure(self, name: str) -> set[str]:
        """``name`` plus every tree it references, transitively."""
        seen, todo = set(), [name]
        while todo:
            cur = todo.pop()
            if cur in seen:
                continue
            seen.add(cur)
            todo.extend(ref.name for ref in self.trees[cur].references())
        return seen

    def record_usage(self, manifests: Mapping[str, Iterable[str]]) -> None:
        """Count, per tree, how many scenarios use it (directly or as a subtree)."""
        counts: dict[str, int] = {}
        for roots in manifests.values():
            used: set[str] = set()
            for r in roots:
                used |= self.closure(r)
            for name in used:
                counts[name] = counts.get(name, 0) + 1
        self.usage = counts

    def resolved_params(self, name: str, overrides: Optional[Mapping] = None) -> dict:
        tree = self.trees[name]
        scope = dict(tree.params)
        scope.update(overrides or {})
        return scope

    def instantiate(self, name: str, overrides: Optional[Mapping] = None, uid: Optional[str] = None) -> BTNode:
        """Expanded copy of tree ``name`` with parameters resolved and unique node ids."""
        if name not in self.trees:
            raise LinkError(f"unknown tree {name!r}")
        tree = self.trees[name]
        unknown = set(overrides or {}) - set(tree.params)
        if unknown:
            raise LinkError(f"tree {name!r} has no parameter(s) {', '.join(sorted(unknown))}", tree.line, 1, tree.file)
        scope = self.resolved_params(name, overrides)
        return self._expand(tree.root, scope, uid or name)

    def _expand(self, node: BTNode, scope: Mapping, uid: str) -> BTNode:
        params = {k: _substitute(v, scope) for k, v in node.params.items()}
        out = BTNode(node.kind, node.name, [], params, node.parallel_policy, node.line, node.col, node.origin, uid)
        if node.kind == "condition":
            spec = CONDITIONS[node.name]
            out.params = {**COMMON_CONDITION_PARAMS, **spec.params, **params}
        elif node.kind == "timer":
            out.params = {"duration": 0.0, **params}
        elif node.kind == "subtree_ref":
            out.children = [self.instantiate(node.name, params, uid=f"{uid}>{node.name}")]
        for i, child in enumerate(node.children):
            out.children.append(self._expand(child, scope, f"{uid}/{i}:{child.name}"))
        return out


def link_library(trees: Iterable[TreeDef]) -> TreeLibrary:
    """Check references, parameters and acyclicity across a set of trees."""
    by_name: dict[str, TreeDef] = {}
    for t in trees:
        if t.name in by_name:
            other = by_name[t.name]
            raise LinkError(f"duplicate tree name {t.name!r} (also defined at {other.file}:{other.line})", t.line, 1, t.file)
        by_name[t.name] = t
    for t in by_name.values():
        for n in t.root.walk():
            loc = (n.line, n.col, t.file)
            if n.kind == "subtree_ref":
                if n.name not in by_name:
                    raise LinkError(f"reference to missing tree {n.name!r}", *loc)
                unknown = set(n.params) - set(by_name[n.name].params)
                if unknown:
                    raise LinkError(f"override of undeclared parameter(s) {', '.join(sorted(unknown))} of tree {n.name!r}", *loc)
            elif n.kind == "condition":
                if n.name not in CONDITIONS:
                    raise LinkError(f"unknown condition {n.name!r}", *loc)
                allowed = set(CONDITIONS[n.name].params) | set(COMMON_CONDITION_PARAMS)
                unknown = set(n.params) - allowed
                if unknown:
                    raise LinkError(f"condition {n.name!r} has no parameter(s) {', '.join(sorted(unknown))}", *loc)
            elif n.kind == "maneuver":
                try:
                    canonical_maneuver(n.name)
                except ValueError as exc:
                    raise LinkError(str(exc), *loc) from None
                unknown = set(n.params) - PARAM_KEYS
                if unknown:
                    raise LinkError(f"maneuver {n.name!r} has no parameter(s) {', '.join(sorted(unknown))}", *loc)
            elif n.kind == "timer":
                unknown = set(n.params) - {"duration"}
                if unknown:
                    raise LinkError(f"timer has no parameter(s) {', '.join(sorted(unknown))}", *loc)
    state: dict[str, int] = {}

    def visit(name: str, chain: list[str]):
        if state.get(name) == 2:
            return
        if state.get(name) == 1:
            cyc = chain[chain.index(name):] + [name]
            t = by_name[name]
            raise LinkError(f"reference cycle: {' -> '.join(cyc)}", t.line, 1, t.file)
        state[name] = 1
        for ref in by_name[name].references():
            visit(ref.name, chain + [name])
        state[name] = 2

    for name in sorted(by_name):
        visit(name, [])
    return TreeLibrary(by_name, {n: t.file for n, t in by_name.items()})


# ticking -----------------------------------------------------------------------

class _Ctx:
    def __init__(self, snapshot, memory):
        self.snapshot = snapshot
        self.memory = memory
        self.decision: Optional[Decision] = None
        self.executed: set[str] = set()
        self.evaluated: list[str] = []
        self.timers_seen: set[str] = set()
        self.running: set[str] = set()


def _freeze(params: dict) -> tuple:
    return tuple(sorted(params.items()))


def _lane_target(node: BTNode, ctx: _Ctx) -> Optional[int]:
    snap = ctx.snapshot
    kind = canonical_maneuver(node.name)
    if kind == "merge_in_front":
        actor = resolve_actor(snap, node.params.get("target", Symbol("ego")))
        if actor is not None:
            return snap.lane_index(actor.state.d)
    rel = int(node.params.get("target_lane_id", 0))
    return snap.own_lane + rel


def _tick_maneuver(node: BTNode, ctx: _Ctx) -> str:
    mem, snap = ctx.memory, ctx.snapshot
    kind = canonical_maneuver(node.name)
    st = mem.maneuvers.setdefault(node.uid, {"done": False, "pending": False, "target_lane": None})
    if st["done"]:
        return SUCCESS
    if node.uid not in mem.running:
        st["pending"] = False
        st["target_lane"] = _lane_target(node, ctx)
    params = dict(node.params)
    if kind in ("lane_swerve", "merge_in_front") or "target_lane_id" in params:
        params["target_lane"] = st["target_lane"]
    if kind in DISCRETE and st["target_lane"] is not None:
        reached = (
            abs(snap.state.d - snap.lane_center(st["target_lane"])) < LANE_REACHED_TOL
            and abs(snap.state.d_dot) < LANE_REACHED_TOL
        )
        if reached and st["pending"]:
            st["done"] = True
            return SUCCESS
        st["pending"] = reached
    ctx.running.add(node.uid)
    if ctx.decision is None:
        ctx.decision = Decision(kind, _freeze(params), node.uid)
    return RUNNING


def _tick(node: BTNode, ctx: _Ctx) -> str:
    ctx.executed.add(node.uid)
    kind = node.kind
    if kind == "fallback":
        for c in node.children:
            st = _tick(c, ctx)
            if st != FAILURE:
                return st
        return FAILURE
    if kind == "sequence":
        for c in node.children:
            st = _tick(c, ctx)
            if st != SUCCESS:
                return st
        return SUCCESS
    if kind == "parallel":
        results = [_tick(c, ctx) for c in node.children]
        need = node.parallel_policy or len(node.children)
        ok = results.count(SUCCESS)
        if ok >= need:
            return SUCCESS
        if len(results) - results.count(FAILURE) < need:
            return FAILURE
        return RUNNING
    if kind == "subtree_ref":
        if len(node.children) != 1:
            raise TickFault(f"subtree {node.name!r} at {node.uid} is not linked")
        return _tick(node.children[0], ctx)
    if kind == "condition":
        ctx.evaluated.append(node.uid)
        if node.uid in ctx.memory.latches:
            return SUCCESS
        spec = CONDITIONS.get(node.name)
        if spec is None:
            raise TickFault(f"unknown condition {node.name!r}")
        value = bool(spec.fn(ctx.snapshot, node.params, ctx.memory))
        if node.params.get("negate"):
            value = not value
        if value and node.params.get("latch"):
            ctx.memory.latches.add(node.uid)
        return SUCCESS if value else FAILURE
    if kind == "timer":
        ctx.timers_seen.add(node.uid)
        start = ctx.memory.timers.setdefault(node.uid, ctx.snapshot.timestamp)
        return SUCCESS if ctx.snapshot.timestamp - start >= float(node.params["duration"]) - 1e-9 else FAILURE
    if kind == "maneuver":
        return _tick_maneuver(node, ctx)
    raise TickFault(f"unknown node kind {kind!r}")


def tick(root: BTNode, snapshot: TrafficSnapshot, memory: Blackboard) -> TickResult:
    """Tick ``root`` once against ``snapshot``, updating ``memory`` in place."""
    ctx = _Ctx(snapshot, memory)
    status = _tick(root, ctx)
    # a timer whose branch was not visited restarts on re-entry
    for uid in [u for u in memory.timers if u not in ctx.timers_seen]:
        del memory.timers[uid]
    memory.running = ctx.running
    return TickResult(status, ctx.decision, frozenset(ctx.executed), tuple(ctx.evaluated))
