"""Realtime platoon runs: tick and planning rate compliance by fleet size.

Runs the platoon scenario for each vehicle count with and without the stopped
obstacle and prints the compliance table. Percentages depend on the host.
"""

import argparse

from sdvsim.engine import EngineConfig, run
from sdvsim.metrics import compliance_table, format_table, write_columns
from sdvsim.platoon import platoon_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--vehicles", type=int, nargs="+", default=[10, 15, 20])
    ap.add_argument("--duration", type=float, default=120.0, help="simulated seconds per run")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--columns-out", metavar="PATH")
    args = ap.parse_args()
    rows = []
    for n in args.vehicles:
        for obstacle in (False, True):
            r = run(platoon_scenario(n, obstacle=obstacle, duration=args.duration), EngineConfig(mode="realtime", workers=args.workers))
            rc = r.compliance()
            rows.append({"vehicles": n, "obstacle": obstacle, "trc": round(rc.trc, 2), "tprc": round(rc.tprc, 2), "max_tick": round(rc.max_tick, 4), "max_plan": round(rc.max_plan, 4)})
            print(f"{n} vehicles, obstacle {'on' if obstacle else 'off'}: end {r.end_reason}, collisions {len(r.collisions())}", flush=True)
    cols = compliance_table(rows)
    print(format_table(cols))
    if args.columns_out:
        write_columns(cols, args.columns_out)


if __name__ == "__main__":
    main()
