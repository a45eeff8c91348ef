"""Displacement curves for several estimators as more cells per column are replaced.

Usage: python3 scripts/breakdown_demo.py [--n 60] [--d 4] [--seed 0]
"""
import argparse

import numpy as np

from cellwise.breakdown import empirical_breakdown


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=60)
    ap.add_argument("--d", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    X = np.random.default_rng(args.seed).standard_normal((args.n, args.d))
    ms = sorted({1, 2, 5, args.n // 10, args.n // 4, args.n // 2 - 1, args.n // 2 + 1})
    print(f"n={args.n} d={args.d}; displacement at magnitude 1e9 (* = broke)")
    print(f"{'estimator':>18} " + " ".join(f"m={m:<6}" for m in ms) + "  bound")
    for est in ("sample_mean", "coordwise_median", "sample_cov", "cellmcd"):
        reps = empirical_breakdown(est, X, ms, seed=args.seed)
        cells = [f"{r.displacement[-1]:.2g}{'*' if r.broke else ' '}".ljust(8) for r in reps]
        print(f"{est:>18} " + " ".join(cells) + f" {reps[0].bound:.3f}")

    # hyperplane placement: covariance collapses once every row sits on a plane
    m = int(np.ceil((args.n - 1) / args.d))
    (rep,) = empirical_breakdown("sample_cov", X, [m], placement="hyperplane")
    print(f"\nhyperplane attack with {m} cells per column: sample_cov broke={rep.broke}")


if __name__ == "__main__":
    main()
