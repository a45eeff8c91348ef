"""cellMCD against the sample covariance under growing cellwise contamination.

Usage: python3 scripts/cellmcd_simulation.py [--n 200] [--d 5] [--reps 5]
"""
import argparse

import numpy as np

from cellwise.cellmcd import fit_cellmcd, kl_divergence
from cellwise.simulation import ar_covariance, cell_rates, gaussian_cells


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--d", type=int, default=5)
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--value", type=float, default=10.0)
    args = ap.parse_args()

    sigma = ar_covariance(args.d)
    print(f"{'eps':>5} {'KL cellMCD':>11} {'KL sample':>10} {'recall':>7} {'false':>7}")
    for eps in (0.0, 0.02, 0.05, 0.1, 0.2):
        kl_r, kl_s, rec, fal = [], [], [], []
        for rep in range(args.reps):
            draw = gaussian_cells(args.n, args.d, sigma, eps, args.value, seed=rep)
            model = fit_cellmcd(draw.X)
            kl_r.append(kl_divergence(model.sigma, sigma))
            kl_s.append(kl_divergence(np.cov(draw.X.values.T), sigma))
            r, f = cell_rates(model.W, draw.truth)
            rec.append(r)
            fal.append(f)
        print(f"{eps:5.2f} {np.median(kl_r):11.3f} {np.median(kl_s):10.3f} "
              f"{np.nanmedian(rec):7.3f} {np.median(fal):7.3f}")


if __name__ == "__main__":
    main()
