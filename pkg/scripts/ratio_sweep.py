"""Sweep compression ratios over seeded toy models and compare the four methods.

    python scripts/ratio_sweep.py --trials 20 --ratios 0.2,0.3,0.4,0.5,0.6 --csv sweep.csv
"""
import argparse
import csv

from tawsvd.pipeline import ExperimentConfig, compare_methods, summarize


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--activation", default="relu")
    p.add_argument("--ratios", default="0.2,0.3,0.4,0.5,0.6")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--calib-source", default="synthetic-gaussian")
    p.add_argument("--csv", default=None)
    args = p.parse_args()

    cfg = ExperimentConfig(depth=args.depth, width=args.width, activation=args.activation,
                           ratios=tuple(float(r) for r in args.ratios.split(",")),
                           calib_source=args.calib_source)
    rows = compare_methods(cfg, args.trials)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)

    print(f"{'ratio':>5}  {'method':<11} {'calib loss':>11} {'propagated':>11} {'dev holdout':>12}")
    for s in sorted(summarize(rows), key=lambda s: (s["ratio"], s["method"])):
        print(f"{s['ratio']:>5.2f}  {s['method']:<11} {s['median_calib_loss']:>11.4g} "
              f"{s['median_propagated_loss']:>11.4g} {s['median_deviation_holdout']:>12.4f}")


if __name__ == "__main__":
    main()
