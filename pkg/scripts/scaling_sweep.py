"""Sweep k for both access-control models and write one CSV row per (model, k).

    python scripts/scaling_sweep.py --scenario scenarios/scaling.json --k 1,2,5,10,25 --out sweep.csv
"""

import argparse
import sys

from signepc.scenario import load_scenario
from signepc.simnet import comparison_csv, compare_models


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default="scenarios/scaling.json")
    ap.add_argument("--k", default="1,2,5,10,25")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    cfg = load_scenario(args.scenario)
    if args.seed is not None:
        cfg = cfg.with_(seed=args.seed)
    rows = compare_models(cfg, [int(k) for k in args.k.split(",")])
    text = comparison_csv(rows)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


if __name__ == "__main__":
    main()
