"""Command-line front end: ``sdvsim run|validate|metrics|serve``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from sdvsim.behavior.dsl import DSLError
from sdvsim.world_map import MapError, RouteError

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_PROTOCOL = 0, 1, 2, 3
VALIDATION_ERRORS = (DSLError, MapError, RouteError)


def _err(msg: str) -> None:
    print(f"sdvsim: {msg}", file=sys.stderr)


def _load(path):
    from sdvsim.scenario import load_scenario

    return load_scenario(path)


def _engine_config(args):
    from sdvsim.engine import EngineConfig

    return EngineConfig(mode=args.mode, workers=args.workers, debug_candidates=bool(args.debug_candidates))


def cmd_validate(args) -> int:
    sc = _load(args.scenario)
    from sdvsim.world_map import build_route

    for a in sc.agents:
        if a.is_sdv:
            build_route(sc.map, a.route)
    print(f"{args.scenario}: ok ({len(sc.agents)} agents, {len(sc.triggers)} triggers)")
    return EXIT_OK


def cmd_run(args) -> int:
    from sdvsim.engine import format_events, format_timing, format_trace, run

    sc = _load(args.scenario)
    result = run(sc, _engine_config(args), seed=args.seed, until=args.until)
    trace = format_trace(result)
    if args.trace_out:
        Path(args.trace_out).write_text(trace)
    if args.events_out:
        Path(args.events_out).write_text(format_events(result))
    if args.debug_candidates:
        Path(args.debug_candidates).write_text("".join(result.candidates))
    rc = result.compliance()
    if args.mode == "realtime":
        timing_path = args.timing_out or (str(Path(args.trace_out).with_suffix(".timing.csv")) if args.trace_out else None)
        if timing_path:
            Path(timing_path).write_text(format_timing(result))
    collisions = result.collisions()
    print(f"{sc.name}: {result.ticks} ticks, {result.plan_cycles} plan cycles, end: {result.end_reason}, collisions: {len(collisions)}")
    for e in collisions:
        print(f"  collision {e.vehicles[0]}-{e.vehicles[1]} at t={e.time:.3f} s, relative speed {e.info['relative_speed']:.2f} m/s")
    if rc.applicable:
        print(f"  TRC {rc.trc:.2f}% (max tick {rc.max_tick:.4f} s)  TPRC {rc.tprc:.2f}% (max plan {rc.max_plan:.4f} s)")
    if args.fail_on_collision and collisions:
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_metrics(args) -> int:
    from sdvsim.metrics import format_table, read_traces, report, sted_matrix, write_columns

    sets = [read_traces(p) for p in args.traces]
    records = []
    if len(sets) == 1:
        for vid, tr in sets[0].items():
            records.append({"type": args.type, "file": args.traces[0], "vehicle": vid, "duration": float(tr.t[-1] - tr.t[0]), "max_speed": float(tr.v.max())})
    else:
        ref = sets[0]
        for path, other in zip(args.traces[1:], sets[1:]):
            for vid, d in sted_matrix(ref, other).items():
                records.append({"type": args.type, "file": path, "vehicle": vid, "sted": d})
    summary = report(records)
    out = {"runs": records, "summary": summary}
    print(json.dumps(out, indent=2, sort_keys=True))
    if summary.get("columns") and summary["columns"]["sted"]:
        print(format_table(summary["columns"]), file=sys.stderr)
        if args.columns_out:
            write_columns(summary["columns"], args.columns_out)
    return EXIT_OK


def cmd_serve(args) -> int:
    from sdvsim.cosim import CoSimServer

    sc = _load(args.scenario)
    server = CoSimServer(sc, args.endpoint, _engine_config(args), seed=args.seed, timeout=args.timeout, max_pause=args.max_pause)
    print(f"listening on {args.endpoint}", file=sys.stderr, flush=True)
    result = server.serve(args.trace_out, args.events_out)
    print(f"{sc.name}: session closed after {server.log.steps} steps, end: {result.end_reason}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sdvsim", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def engine_opts(sp):
        sp.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        sp.add_argument("--mode", choices=("lockstep", "realtime"), default="lockstep")
        sp.add_argument("--workers", type=int, default=1, help="planner threads")
        sp.add_argument("--debug-candidates", metavar="PATH", nargs="?", const="candidates.jsonl", default=None, help="write every planning candidate as JSON lines (default file candidates.jsonl)")
        sp.add_argument("--trace-out", metavar="PATH")
        sp.add_argument("--events-out", metavar="PATH")

    r = sub.add_parser("run", help="run a scenario")
    r.add_argument("scenario")
    engine_opts(r)
    r.add_argument("--until", type=float, default=None, help="stop after this many simulated seconds")
    r.add_argument("--timing-out", metavar="PATH")
    r.add_argument("--fail-on-collision", action="store_true")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("scenario")
    v.set_defaults(func=cmd_validate)

    m = sub.add_parser("metrics", help="summarize trace files; with several, STED of each against the first")
    m.add_argument("traces", nargs="+")
    m.add_argument("--type", default="all", help="scenario type label for the summary")
    m.add_argument("--columns-out", metavar="PATH")
    m.set_defaults(func=cmd_metrics)

    s = sub.add_parser("serve", help="co-simulate with an external Ego peer")
    s.add_argument("scenario")
    s.add_argument("--endpoint", required=True, help="host:port or a Unix socket path")
    s.add_argument("--timeout", type=float, default=5.0, help="peer silence before the run pauses, s")
    s.add_argument("--max-pause", type=float, default=None, help="abort after this much peer silence, s")
    engine_opts(s)
    s.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    from sdvsim.cosim import ProtocolError
    from sdvsim.scenario import ScenarioError

    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, *VALIDATION_ERRORS) as exc:
        _err(str(exc))
        return EXIT_VALIDATION
    except ProtocolError as exc:
        _err(f"protocol error: {exc}")
        return EXIT_PROTOCOL
    except (OSError, ValueError, RuntimeError) as exc:
        _err(f"runtime error: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
