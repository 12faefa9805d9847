"""Topology-rule ablation on a seeded synthetic corpus.

Refines every raw sample once per entry of ``ABLATION_SCHEDULE`` and prints
the corpus metrics for each configuration.

    python3 scripts/run_ablation.py --count 200 --seed 2024
"""

import argparse
import time

from garmentstruct.geometry import refine
from garmentstruct.metrics import aggregate, evaluate, format_table
from garmentstruct.synth import make_corpus
from garmentstruct.topology import ABLATION_SCHEDULE


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--count", type=int, default=200)
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args(argv)

    pairs = make_corpus(args.count, seed=args.seed)
    rows = []
    for label, rules in ABLATION_SCHEDULE:
        t0 = time.perf_counter()
        reports = [evaluate(refine(raw, rules=rules)[0], gt) for gt, raw in pairs]
        rows.append((label, aggregate(reports)))
        print(f"{label:<22} {time.perf_counter() - t0:6.1f}s")
    print()
    print(format_table(rows), end="")


if __name__ == "__main__":
    main()
