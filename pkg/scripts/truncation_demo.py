"""Side-by-side loss of dropping each singular value: diagonal scaling vs Cholesky whitening.

Prints the first seeded 3x3 instance where dropping the smallest scaled
singular value is not the cheapest choice, and the same instance under
whitening, where each drop costs exactly its singular value.
"""
import argparse

import numpy as np

from tawsvd.baselines import find_asvd_witness


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--start-seed", type=int, default=0)
    p.add_argument("--size", type=int, default=3)
    args = p.parse_args()

    wit = find_asvd_witness(args.start_seed, n=args.size)
    if wit is None:
        raise SystemExit("no instance found in the search window")
    np.set_printoptions(precision=4, suppress=True)
    print(f"seed {wit.seed}")
    print("diagonal scaling")
    print("  singular values :", wit.asvd_sigma)
    print("  loss if dropped :", wit.asvd_losses)
    print("whitening")
    print("  singular values :", wit.whitened_sigma)
    print("  loss if dropped :", wit.whitened_losses)


if __name__ == "__main__":
    main()
