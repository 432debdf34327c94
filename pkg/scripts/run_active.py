#!/usr/bin/env python3
"""Ten-stage active learning: CRL + least confidence against the baseline learner's strategies."""
import argparse

from crl import experiments

PAIRINGS = [("crl+least_confidence", "least_confidence", 1.0), ("random", "random", 0.0),
            ("entropy", "entropy", 0.0), ("coreset", "coreset", 0.0)]


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, nargs="+", default=list(experiments.SEEDS))
    p.add_argument("--stages", type=int, default=10)
    p.add_argument("--only", nargs="+", help="subset of: " + ", ".join(name for name, _, _ in PAIRINGS))
    args = p.parse_args()

    chosen = [x for x in PAIRINGS if not args.only or x[0] in args.only]
    for seed in args.seeds:
        for name, strategy, lam in chosen:
            state = experiments.active_run(seed, strategy, lam, stages=args.stages)
            print(f"seed {seed}  {name:22s}  " + " ".join(f"{100 * a:5.1f}" for a in state.accuracy_log))


if __name__ == "__main__":
    main()
