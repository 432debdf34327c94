#!/usr/bin/env python3
"""MSP, tuned ODIN and Mahalanobis on blobs translated by 6 stds, baseline vs CRL."""
import argparse

from crl import experiments


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, nargs="+", default=list(experiments.SEEDS))
    p.add_argument("--no-tune", action="store_true", help="use T=1, eps=0 instead of the grid search")
    args = p.parse_args()

    keys = ("fpr_at_95_tpr", "detection_error", "auroc", "aupr_in", "aupr_out")
    print(f"{'seed':>4}  {'model':8s}  {'detector':11s}  " + "  ".join(f"{k:>15s}" for k in keys))
    for seed in args.seeds:
        run = experiments.ranking_pair(seed)
        for name, res in (("baseline", run.baseline), ("crl", run.crl)):
            for det, rep in experiments.ood_scores(res, seed, tune=not args.no_tune).items():
                row = "  ".join(f"{100 * rep[k]:15.1f}" for k in keys)
                extra = f"  T={rep['config']['temperature']:g} eps={rep['config']['epsilon']:g}" if "config" in rep else ""
                print(f"{seed:4d}  {name:8s}  {det:11s}  {row}{extra}")


if __name__ == "__main__":
    main()
