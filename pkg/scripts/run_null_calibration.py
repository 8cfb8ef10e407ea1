#!/usr/bin/env python3
"""Null calibration experiment: rejection rates when nothing is correlated.

All three statistics should reject at roughly the nominal level; this is
the quickest end-to-end sanity check of the whole inference stack.
"""

import argparse
import time

from balance_lab import DgpConfig, run_power_study


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=500)
    parser.add_argument("--replicates", type=int, default=500)
    parser.add_argument("--permutations", type=int, default=200)
    parser.add_argument("--alpha", type=float, default=0.05)
    parser.add_argument("--seed", type=int, default=90210)
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args()

    cell = DgpConfig(n=args.n, p=3, seed=args.seed)
    start = time.perf_counter()
    result = run_power_study(
        [cell],
        replicates=args.replicates,
        b_permutations=args.permutations,
        alpha=args.alpha,
        threads=args.threads,
    )[0]
    elapsed = time.perf_counter() - start

    print(f"null calibration: n={args.n}, replicates={args.replicates}, "
          f"B={args.permutations}, alpha={args.alpha}")
    print(f"{'statistic':<12}{'rejection':>12}{'mc_se':>10}")
    for name, rate in result.rejection_rate.items():
        print(f"{name:<12}{rate:>12.4f}{result.mc_standard_error[name]:>10.4f}")
    print(f"standardized bias: {result.standardized_bias:+.5f}")
    print(f"elapsed: {elapsed:.1f}s")


if __name__ == "__main__":
    main()
