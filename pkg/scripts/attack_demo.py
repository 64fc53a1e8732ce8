"""Run the shipped demo scenario and show what happened to each scripted attack."""

import argparse

from signepc.attack_suite import run_attack_suite
from signepc.scenario import load_scenario
from signepc.simnet import run_scenario


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenario", default="scenarios/demo.json")
    ap.add_argument("--trials", type=int, default=100)
    args = ap.parse_args()

    cfg = load_scenario(args.scenario)
    rep = run_scenario(cfg)
    print(f"{rep.transactions_completed} transactions, verdicts {rep.verdicts}")
    for kind, outcomes in rep.attacks.items():
        print(f"  {kind}: {outcomes}")
    print()
    for line in run_attack_suite(cfg, args.trials, cfg.seed).lines():
        print(line)


if __name__ == "__main__":
    main()
