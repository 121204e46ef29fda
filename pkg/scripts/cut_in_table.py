"""Cut-in parameter sweep against a scripted constant-speed Ego.

For each (acceptance gap, target gap, relative speed) row, prints the gap to
the Ego when the merge starts, whether a collision happened, and the speeds at
impact.
"""

import argparse
from dataclasses import replace
from importlib import resources

from sdvsim.engine import run
from sdvsim.scenario import load_scenario

ROWS = [(2, -2, -5), (2, -5, -5), (5, -5, -5), (5, -5, -10), (5, -10, -10), (2, 5, -3), (5, 5, -3)]


def with_params(sc, **params):
    return replace(sc, agents=tuple(replace(a, params={**a.params, **params}) if a.is_sdv else a for a in sc.agents))


def row(sc, acc, dd, dv):
    r = run(with_params(sc, acceptance=float(acc), delta_s=(float(dd), float(dv))))
    ego_id = sc.ego.id
    sdv_id = next(a.id for a in sc.agents if a.is_sdv)
    start = next((e for e in r.events if e.kind == "maneuver" and e.info["to"] == "merge_in_front"), None)
    gap = None
    if start is not None:
        x = {vid: {round(row[0], 6): row[1] for row in r.traces[vid]} for vid in (ego_id, sdv_id)}
        t = round(start.time, 6)
        gap = x[sdv_id][t] - x[ego_id][t] - 4.5
    hit = r.collisions()
    speeds = None
    if hit:
        t = round(hit[0].time, 6)
        v = {vid: {round(row[0], 6): row[3] for row in r.traces[vid]} for vid in (ego_id, sdv_id)}
        speeds = (v[sdv_id].get(t), v[ego_id].get(t))
    return gap, bool(hit), speeds


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenario", default=str(resources.files("sdvsim") / "data" / "scenarios" / "cut_in.yaml"))
    args = ap.parse_args()
    sc = load_scenario(args.scenario)
    print(f"{'acc':>4} {'d_t':>4} {'v_t':>4} | {'gap@start':>9} {'coll':>4} {'v_sdv':>6} {'v_ego':>6}")
    for acc, dd, dv in ROWS:
        gap, hit, speeds = row(sc, acc, dd, dv)
        vs, ve = (f"{speeds[0]:.2f}", f"{speeds[1]:.2f}") if speeds else ("-", "-")
        g = f"{gap:.2f}" if gap is not None else "-"
        print(f"{acc:>4} {dd:>4} {dv:>4} | {g:>9} {'y' if hit else 'n':>4} {vs:>6} {ve:>6}")


if __name__ == "__main__":
    main()
