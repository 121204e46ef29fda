"""Internal reuse level of each scenario in a corpus, statically and over executed nodes."""

import argparse
from importlib import resources
from pathlib import Path

from sdvsim.behavior import internal_reuse_level
from sdvsim.engine import run
from sdvsim.scenario import load_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("scenarios", nargs="*", help="scenario files (default: the bundled reuse corpus)")
    args = ap.parse_args()
    paths = args.scenarios or sorted(Path(resources.files("sdvsim") / "data" / "reuse").glob("*.yaml"))
    scs = [load_scenario(p) for p in paths]
    manifests = {s.name: s.root_trees() for s in scs}
    print(f"{'scenario':<18} {'trees':<24} {'static':>7} {'executed':>9}")
    for s in scs:
        static = internal_reuse_level(s.root_trees(), s.library, manifests=manifests)
        executed = set().union(*run(s).executed.values())
        dyn = internal_reuse_level(s.root_trees(), s.library, executed_nodes=executed, manifests=manifests)
        print(f"{s.name:<18} {','.join(s.root_trees()):<24} {static:>7.3f} {dyn:>9.3f}")


if __name__ == "__main__":
    main()
