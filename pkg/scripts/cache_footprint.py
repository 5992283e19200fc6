"""Cached-state footprint of a compressed toy model across ratios."""
import argparse

from tawsvd.calibration import generate_calibration
from tawsvd.config import CompressionConfig
from tawsvd.model import cache_accounting, generate_toy_model
from tawsvd.pipeline import compress_model


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--columns", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    model = generate_toy_model(args.depth, [args.width] * (args.depth + 1), "relu", args.seed)
    calib = generate_calibration(args.width, 256, args.seed)
    print(f"{'ratio':>5} {'full':>9} {'cached':>9} {'r/M':>7} {'recovery err':>13}")
    for ratio in (0.2, 0.4, 0.6, 0.8):
        res = compress_model(model, calib, CompressionConfig(ratio=ratio))
        acc = cache_accounting(res.model, args.columns, seed=args.seed)
        print(f"{ratio:>5.1f} {acc.full_state_elements:>9} {acc.factored_state_elements:>9} "
              f"{acc.ratio:>7.4f} {acc.max_recovery_error:>13.2e}")


if __name__ == "__main__":
    main()
