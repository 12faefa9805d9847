"""Loop-closure rate as a function of endpoint jitter.

For each jitter level, refines a seeded corpus and counts the valid panels
that close and triangulate.

    python3 scripts/closure_study.py --count 50 --sigmas 0 0.01 0.02 0.05 0.1
"""

import argparse
from dataclasses import replace

from garmentstruct.geometry import refine
from garmentstruct.synth import CorruptionSpec, make_corpus
from garmentstruct.triangulate import triangulate_panel


def closure_rate(pairs):
    total = closed = meshed = 0
    for _, raw in pairs:
        ref, _ = refine(raw)
        info = ref.meta["closure"]
        for pn in ref.valid_panels():
            total += 1
            if not info[str(pn.patch_id)]["closed"]:
                continue
            closed += 1
            try:
                triangulate_panel(pn)
            except ValueError:
                continue
            meshed += 1
    return total, closed, meshed


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--count", type=int, default=50)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--sigmas", type=float, nargs="+", default=[0.0, 0.01, 0.02, 0.05, 0.1])
    args = ap.parse_args(argv)

    print(f"{'sigma':>6}  {'panels':>6}  {'closed':>7}  {'meshed':>7}")
    for sigma in args.sigmas:
        spec = replace(CorruptionSpec(), endpoint_jitter_sigma=sigma)
        total, closed, meshed = closure_rate(make_corpus(args.count, seed=args.seed, corruption=spec))
        print(f"{sigma:6.3f}  {total:6d}  {closed / total:7.2%}  {meshed / total:7.2%}")


if __name__ == "__main__":
    main()
