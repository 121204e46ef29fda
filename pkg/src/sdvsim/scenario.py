"""Scenario files: agents, triggers, end conditions and the tree library they use.

A scenario is a YAML document::

    format_version: 1
    name: cut_in
    seed: 7
    map: ../maps/two_lane.yaml        # path relative to this file, or an inline map
    trees: [../trees/standard.bt, ../trees/cut_in.bt]
    signals: {1: [[0, green], [20, red]]}
    agents:
      - {id: 1, kind: SDV, route: [[0, 3.5], [500, 3.5]], speed: 12, tree: cut_in}
      - {id: 0, kind: Ego, route: [[20, 0], [500, 0]], script: {type: constant, speed: 13.16}}
      - {id: 5, kind: PDT, route: [[100, 0], [200, 0]], profile: [[0, 8]], active: false}
    triggers:
      - {name: go, when: {time: 2.0}, do: [{activate: 5}]}
    end: {timeout: 30, collision: true, goal: [1]}

Ego scripts are ``constant`` (speed), ``brake`` (speed, at, decel), ``replay``
(samples or a trace file), ``external`` (driven over the co-simulation socket)
and ``sdv`` (a behavior tree, like any SDV).
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from sdvsim.behavior.dsl import DSLError, load_tree_file, parse_trees, parse_value
from sdvsim.behavior.tree import TreeLibrary, link_library
from sdvsim.motion import SpeedProfile
from sdvsim.planner.config import PARAM_KEYS, ManeuverConfig, config_from_params
from sdvsim.world_map import Map, MapError, RouteError, build_route, load_map, map_from_dict

FORMAT_VERSION = 1
KINDS = ("SDV", "PDT", "Ego")
SCRIPTS = ("constant", "brake", "replay", "external", "sdv")
PHASES = ("green", "yellow", "red")


class ScenarioError(ValueError):
    def __init__(self, message: str, where: str = "", file: str = "<scenario>"):
        super().__init__(message)
        self.message, self.where, self.file = message, where, file

    def __str__(self) -> str:
        loc = f"{self.file}: {self.where}: " if self.where else f"{self.file}: "
        return loc + self.message


@dataclass(frozen=True)
class AgentSpec:
    id: int
    kind: str
    route: tuple[tuple[float, float], ...]
    speed: float = 0.0
    length: float = 4.5
    width: float = 1.8
    active: bool = True
    tree: Optional[str] = None
    params: dict = field(default_factory=dict)  # overrides of the root tree's parameters
    config: dict = field(default_factory=dict)  # base maneuver configuration
    profile: Optional[tuple[tuple[float, float], ...]] = None
    profiles: dict = field(default_factory=dict)
    script: dict = field(default_factory=dict)

    @property
    def is_sdv(self) -> bool:
        return self.kind == "SDV" or (self.kind == "Ego" and self.script.get("type") == "sdv")

    def speed_profile(self) -> SpeedProfile:
        s = self.script
        if s.get("type") == "brake":
            return SpeedProfile.brake(float(s["speed"]), float(s.get("at", 0.0)), float(s.get("decel", 6.0)))
        if self.profile is not None:
            return SpeedProfile(self.profile)
        return SpeedProfile.constant(float(s.get("speed", self.speed)))


@dataclass(frozen=True)
class TriggerSpec:
    name: str
    when: dict
    actions: tuple[dict, ...]


@dataclass(frozen=True)
class EndSpec:
    timeout: float = 60.0
    collision: bool = True
    goal: tuple[int, ...] = ()  # agents whose arrival ends the run


@dataclass
class Scenario:
    name: str
    map: Map
    agents: tuple[AgentSpec, ...]
    library: TreeLibrary
    triggers: tuple[TriggerSpec, ...] = ()
    end: EndSpec = EndSpec()
    seed: int = 0
    signals: dict = field(default_factory=dict)  # id -> ((t, phase), ...)
    metadata: dict = field(default_factory=dict)
    map_ref: Any = None
    tree_refs: tuple = ()
    source: Optional[Path] = None

    @property
    def ego(self) -> AgentSpec:
        return next(a for a in self.agents if a.kind == "Ego")

    def agent(self, aid: int) -> AgentSpec:
        for a in self.agents:
            if a.id == aid:
                return a
        raise KeyError(aid)

    def root_trees(self) -> list[str]:
        return sorted({a.tree for a in self.agents if a.is_sdv and a.tree})

    def base_config(self, agent: AgentSpec) -> ManeuverConfig:
        return config_from_params("velocity_keeping", agent.config, None, ego_id=self.ego.id)


def _points(raw, where: str, file: str) -> tuple[tuple[float, float], ...]:
    try:
        pts = tuple((float(p[0]), float(p[1])) for p in raw)
    except (TypeError, ValueError, IndexError):
        raise ScenarioError("expected a list of [x, y] points", where, file) from None
    if not pts or not all(math.isfinite(c) for p in pts for c in p):
        raise ScenarioError("expected a non-empty list of finite [x, y] points", where, file)
    return pts


def _profile(raw, where: str, file: str):
    try:
        prof = tuple((float(t), float(v)) for t, v in raw)
        SpeedProfile(prof)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"bad speed profile: {exc}", where, file) from None
    return prof


def _param_value(v, where: str, file: str):
    """YAML parameter values: strings use DSL value syntax, lists become tuples."""
    if isinstance(v, str):
        try:
            return parse_value(v)
        except DSLError as exc:
            raise ScenarioError(f"bad value {v!r}: {exc.message}", where, file) from None
    if isinstance(v, list):
        return tuple(_param_value(x, where, file) for x in v)
    return v


def _param_text(v):
    from sdvsim.params import format_value

    if isinstance(v, (int, float)):
        return v
    return format_value(v)


def _resolve(base: Optional[Path], ref: str) -> Path:
    p = Path(ref)
    return p if p.is_absolute() or base is None else (base / p)


def _load_replay(script: dict, base: Optional[Path], where: str, file: str) -> dict:
    from sdvsim.metrics import read_trace_rows

    out = dict(script)
    if "samples" in out:
        out["samples"] = [list(map(float, r)) for r in out["samples"]]
    elif "file" in out:
        path = _resolve(base, out["file"])
        rows = read_trace_rows(path)
        vid = int(out.get("vehicle", -1))
        sel = [r for r in rows if vid < 0 or r["id"] == vid]
        if not sel:
            raise ScenarioError(f"replay file {path} has no rows for vehicle {vid}", where, file)
        out["samples"] = [[r["t"], r["x"], r["y"], r["theta"], r["v"], r["a"]] for r in sel]
    else:
        raise ScenarioError("replay script needs 'samples' or 'file'", where, file)
    if len(out["samples"]) < 2:
        raise ScenarioError("replay needs at least two samples", where, file)
    return out


def _agent(raw: dict, i: int, base: Optional[Path], file: str) -> AgentSpec:
    where = f"agents[{i}]"
    if not isinstance(raw, dict):
        raise ScenarioError("agent must be a mapping", where, file)
    known = {"id", "kind", "route", "speed", "length", "width", "active", "tree", "params", "config", "profile", "profiles", "script"}
    unknown = set(raw) - known
    if unknown:
        raise ScenarioError(f"unknown field(s) {', '.join(sorted(unknown))}", where, file)
    aid = raw.get("id")
    if not isinstance(aid, int) or isinstance(aid, bool):
        raise ScenarioError("agent id must be an integer", where, file)
    where = f"agents[{i}] (id {aid})"
    kind = raw.get("kind")
    if kind not in KINDS:
        raise ScenarioError(f"kind must be one of {', '.join(KINDS)}, got {kind!r}", where, file)
    if "route" not in raw:
        raise ScenarioError("missing route", where, file)
    route = _points(raw["route"], where + ".route", file)
    script = dict(raw.get("script") or {})
    if kind == "Ego":
        script.setdefault("type", "constant")
        if script["type"] not in SCRIPTS:
            raise ScenarioError(f"unknown Ego script {script['type']!r}", where + ".script", file)
        if script["type"] == "replay":
            script = _load_replay(script, base, where + ".script", file)
    elif script:
        raise ScenarioError("only the Ego agent takes a script", where, file)
    spec = AgentSpec(
        id=aid,
        kind=kind,
        route=route,
        speed=float(raw.get("speed", script.get("speed", 0.0))),
        length=float(raw.get("length", 4.5)),
        width=float(raw.get("width", 1.8)),
        active=bool(raw.get("active", True)),
        tree=raw.get("tree", script.get("tree")),
        params={k: _param_value(v, f"{where}.params.{k}", file) for k, v in (raw.get("params") or {}).items()},
        config={k: _param_value(v, f"{where}.config.{k}", file) for k, v in (raw.get("config") or {}).items()},
        profile=_profile(raw["profile"], where + ".profile", file) if raw.get("profile") is not None else None,
        profiles={str(k): _profile(v, f"{where}.profiles.{k}", file) for k, v in (raw.get("profiles") or {}).items()},
        script=script,
    )
    if spec.length <= 0 or spec.width <= 0 or spec.speed < 0:
        raise ScenarioError("length and width must be positive and speed non-negative", where, file)
    if spec.is_sdv:
        if not spec.tree:
            raise ScenarioError("SDV agent needs a tree", where, file)
        if len(route) < 2:
            raise ScenarioError("SDV route needs at least a start and a goal point", where, file)
        unknown = set(spec.config) - PARAM_KEYS
        if unknown:
            raise ScenarioError(f"unknown config key(s) {', '.join(sorted(unknown))}", where + ".config", file)
        try:
            config_from_params("velocity_keeping", spec.config)
        except (ValueError, TypeError) as exc:
            raise ScenarioError(f"bad config: {exc}", where + ".config", file) from None
    elif kind in ("PDT", "Ego") and script.get("type") != "replay" and len(route) < 2:
        raise ScenarioError("path needs at least two points", where, file)
    return spec


def _when(raw, where: str, file: str) -> dict:
    if not isinstance(raw, dict) or len(raw) != 1:
        raise ScenarioError("trigger condition must have exactly one of time, region, gap", where, file)
    (key, val), = raw.items()
    if key == "time":
        return {"time": float(val)}
    if key == "region":
        if not isinstance(val, dict) or "agent" not in val or "center" not in val or "radius" not in val:
            raise ScenarioError("region needs agent, center and radius", where, file)
        return {"region": {"agent": int(val["agent"]), "center": [float(c) for c in val["center"]], "radius": float(val["radius"])}}
    if key == "gap":
        if not isinstance(val, dict) or len(val.get("agents", ())) != 2 or "max" not in val:
            raise ScenarioError("gap needs two agents and max", where, file)
        return {"gap": {"agents": [int(a) for a in val["agents"]], "max": float(val["max"])}}
    raise ScenarioError(f"unknown trigger condition {key!r}", where, file)


def _action(raw, where: str, file: str) -> dict:
    if not isinstance(raw, dict) or len(raw) != 1:
        raise ScenarioError("action must have exactly one of activate, switch_profile, end", where, file)
    (key, val), = raw.items()
    if key == "activate":
        return {"activate": int(val)}
    if key == "switch_profile":
        if not isinstance(val, dict) or "agent" not in val or "profile" not in val:
            raise ScenarioError("switch_profile needs agent and profile", where, file)
        return {"switch_profile": {"agent": int(val["agent"]), "profile": str(val["profile"])}}
    if key == "end":
        return {"end": bool(val)}
    raise ScenarioError(f"unknown action {key!r}", where, file)


def scenario_from_dict(doc: dict, base: Optional[Path] = None, file: str = "<scenario>", library: Optional[TreeLibrary] = None) -> Scenario:
    """Validate a parsed scenario document and resolve its map and trees."""
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a mapping", "", file)
    if doc.get("format_version") != FORMAT_VERSION:
        raise ScenarioError(f"unsupported format_version {doc.get('format_version')!r}", "format_version", file)
    known = {"format_version", "name", "seed", "map", "trees", "signals", "agents", "triggers", "end", "metadata"}
    unknown = set(doc) - known
    if unknown:
        raise ScenarioError(f"unknown field(s) {', '.join(sorted(unknown))}", "", file)
    map_ref = doc.get("map")
    try:
        if isinstance(map_ref, dict):
            m = map_from_dict(map_ref)
        elif isinstance(map_ref, str):
            m = load_map(_resolve(base, map_ref))
        else:
            raise ScenarioError("missing map", "map", file)
    except (MapError, OSError) as exc:
        raise ScenarioError(f"map: {exc}", "map", file) from None

    tree_refs = tuple(doc.get("trees") or ())
    if library is None:
        trees = []
        for i, ref in enumerate(tree_refs):
            try:
                if isinstance(ref, str) and "\n" not in ref:
                    trees.extend(load_tree_file(_resolve(base, ref)))
                else:
                    trees.extend(parse_trees(str(ref), f"{file}:trees[{i}]"))
            except OSError as exc:
                raise ScenarioError(f"cannot read tree file: {exc}", f"trees[{i}]", file) from None
            except DSLError as exc:
                raise ScenarioError(str(exc), f"trees[{i}]", file) from None
        try:
            library = link_library(trees)
        except DSLError as exc:
            raise ScenarioError(str(exc), "trees", file) from None

    raw_agents = doc.get("agents")
    if not isinstance(raw_agents, list) or not raw_agents:
        raise ScenarioError("scenario needs at least one agent", "agents", file)
    agents = tuple(_agent(a, i, base, file) for i, a in enumerate(raw_agents))
    ids = [a.id for a in agents]
    for i, aid in enumerate(ids):
        if aid in ids[:i]:
            raise ScenarioError(f"duplicate agent id {aid}", f"agents[{i}]", file)
    n_ego = sum(a.kind == "Ego" for a in agents)
    if n_ego != 1:
        raise ScenarioError(f"exactly one Ego agent required, found {n_ego}", "agents", file)
    for i, a in enumerate(agents):
        where = f"agents[{i}] (id {a.id})"
        if a.is_sdv:
            if a.tree not in library.trees:
                raise ScenarioError(f"unknown tree {a.tree!r}", where, file)
            unknown = set(a.params) - set(library.trees[a.tree].params)
            if unknown:
                raise ScenarioError(f"tree {a.tree!r} has no parameter(s) {', '.join(sorted(unknown))}", where, file)
            try:
                build_route(m, a.route)
            except RouteError as exc:
                raise ScenarioError(f"route: {exc}", where, file) from None

    signals = {}
    for sid, sched in (doc.get("signals") or {}).items():
        where = f"signals.{sid}"
        try:
            entries = tuple((float(t), str(ph)) for t, ph in sched)
        except (TypeError, ValueError):
            raise ScenarioError("signal schedule must be a list of [time, phase]", where, file) from None
        if not entries or any(ph not in PHASES for _, ph in entries):
            raise ScenarioError(f"signal phases must be among {', '.join(PHASES)}", where, file)
        if any(b[0] <= a[0] for a, b in zip(entries, entries[1:])):
            raise ScenarioError("signal schedule times must increase", where, file)
        signals[int(sid)] = entries

    triggers = []
    for i, raw in enumerate(doc.get("triggers") or ()):
        where = f"triggers[{i}]"
        if not isinstance(raw, dict) or "when" not in raw or "do" not in raw:
            raise ScenarioError("trigger needs 'when' and 'do'", where, file)
        when = _when(raw["when"], where + ".when", file)
        actions = tuple(_action(a, f"{where}.do[{j}]", file) for j, a in enumerate(raw["do"]))
        for ref in [when.get("region", {}).get("agent"), *when.get("gap", {}).get("agents", [])]:
            if ref is not None and ref not in ids:
                raise ScenarioError(f"condition refers to unknown agent {ref}", where, file)
        for act in actions:
            target = act.get("activate", act.get("switch_profile", {}).get("agent") if "switch_profile" in act else None)
            if target is not None and target not in ids:
                raise ScenarioError(f"action refers to unknown agent {target}", where, file)
            if "switch_profile" in act:
                ag = agents[ids.index(target)]
                if act["switch_profile"]["profile"] not in ag.profiles:
                    raise ScenarioError(f"agent {target} has no profile {act['switch_profile']['profile']!r}", where, file)
        triggers.append(TriggerSpec(str(raw.get("name", f"trigger{i}")), when, actions))

    end_raw = doc.get("end") or {}
    goal = end_raw.get("goal", ())
    if goal == "all":
        goal = tuple(a.id for a in agents if a.is_sdv)
    end = EndSpec(float(end_raw.get("timeout", 60.0)), bool(end_raw.get("collision", True)), tuple(int(g) for g in goal))
    if end.timeout <= 0:
        raise ScenarioError("timeout must be positive", "end.timeout", file)
    for g in end.goal:
        if g not in ids:
            raise ScenarioError(f"goal refers to unknown agent {g}", "end.goal", file)
    return Scenario(
        name=str(doc.get("name", Path(file).stem)),
        map=m,
        agents=agents,
        library=library,
        triggers=tuple(triggers),
        end=end,
        seed=int(doc.get("seed", 0)),
        signals=signals,
        metadata=dict(doc.get("metadata") or {}),
        map_ref=map_ref,
        tree_refs=tree_refs,
        source=Path(file) if file != "<scenario>" else None,
    )


def load_scenario(path, library: Optional[TreeLibrary] = None) -> Scenario:
    p = Path(path)
    try:
        doc = yaml.safe_load(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc}", "", str(p)) from None
    except yaml.YAMLError as exc:
        raise ScenarioError(f"does not parse: {exc}", "", str(p)) from None
    return scenario_from_dict(doc, p.parent, str(p), library)


def scenario_to_dict(sc: Scenario) -> dict:
    """Document form of a scenario; map and tree references are kept as given."""

    def agent(a: AgentSpec) -> dict:
        out: dict = {"id": a.id, "kind": a.kind, "route": [list(p) for p in a.route], "speed": a.speed}
        if (a.length, a.width) != (4.5, 1.8):
            out.update(length=a.length, width=a.width)
        if not a.active:
            out["active"] = False
        if a.tree and a.kind == "SDV":
            out["tree"] = a.tree
        for key in ("params", "config"):
            if getattr(a, key):
                out[key] = {k: _param_text(v) for k, v in getattr(a, key).items()}
        if a.profile is not None:
            out["profile"] = [list(p) for p in a.profile]
        if a.profiles:
            out["profiles"] = {k: [list(p) for p in v] for k, v in a.profiles.items()}
        if a.script:
            out["script"] = copy.deepcopy(a.script)
        return out

    doc = {
        "format_version": FORMAT_VERSION,
        "name": sc.name,
        "seed": sc.seed,
        "map": sc.map_ref,
        "trees": list(sc.tree_refs),
        "agents": [agent(a) for a in sc.agents],
        "end": {"timeout": sc.end.timeout, "collision": sc.end.collision, "goal": list(sc.end.goal)},
    }
    if sc.signals:
        doc["signals"] = {k: [list(e) for e in v] for k, v in sc.signals.items()}
    if sc.triggers:
        doc["triggers"] = [{"name": t.name, "when": copy.deepcopy(t.when), "do": [copy.deepcopy(a) for a in t.actions]} for t in sc.triggers]
    if sc.metadata:
        doc["metadata"] = copy.deepcopy(sc.metadata)
    return doc


def dump_scenario(sc: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(sc), sort_keys=False)


def signal_state(schedule, t: float):
    """(phase, time in phase) of a signal schedule at ``t``."""
    cur = schedule[0]
    for entry in schedule:
        if entry[0] <= t + 1e-9:
            cur = entry
    return cur[1], max(0.0, t - cur[0])


def evaluate_triggers(scenario: Scenario, positions: dict, sim_time: float, fired: set) -> list[tuple[str, dict]]:
    """Actions of triggers whose condition holds now, in file order; each trigger fires once.

    A trigger without actions yields one empty action so that its firing is still recorded.

    ``positions`` maps active agent ids to (x, y). ``fired`` is updated in place.
    """
    out = []
    for trig in scenario.triggers:
        if trig.name in fired:
            continue
        w = trig.when
        hit = False
        if "time" in w:
            hit = sim_time >= w["time"] - 1e-9
        elif "region" in w:
            r = w["region"]
            p = positions.get(r["agent"])
            hit = p is not None and math.hypot(p[0] - r["center"][0], p[1] - r["center"][1]) <= r["radius"]
        elif "gap" in w:
            a, b = (positions.get(x) for x in w["gap"]["agents"])
            hit = a is not None and b is not None and math.hypot(a[0] - b[0], a[1] - b[1]) <= w["gap"]["max"]
        if hit:
            fired.add(trig.name)
            out.extend((trig.name, act) for act in (trig.actions or ({},)))
    return out
