"""Calibration self-consistency over synthetic cruising traces.

Each case drives a known speed range and lane offset; the style extracted from
that trace configures a rerun, which is scored by STED against the original
and compared with a rerun using default parameters.
"""

import argparse
import statistics

from sdvsim.calibrate import self_consistency
from sdvsim.metrics import format_table


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--cases", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--duration", type=float, default=15.0)
    ap.add_argument("--verbose", action="store_true", help="print every case")
    args = ap.parse_args()
    res = self_consistency(args.cases, args.seed, args.duration)
    if args.verbose:
        out = res["outcomes"]
        print(format_table({
            "case": [o.case.index for o in out],
            "speed": [o.case.target_speed for o in out],
            "offset": [o.case.lateral_offset for o in out],
            "sted_default": [o.sted_default for o in out],
            "sted_calibrated": [o.sted_calibrated for o in out],
        }))
    cal = [o.sted_calibrated for o in res["outcomes"]]
    print(f"improved: {res['improved_fraction']:.0%} of {len(cal)}")
    print(f"STED default    median {res['median_default']:.3f} m")
    print(f"STED calibrated median {res['median_calibrated']:.3f} m, mean {statistics.fmean(cal):.3f} m, max {max(cal):.3f} m")


if __name__ == "__main__":
    main()
