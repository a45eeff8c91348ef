"""Subspace recovery of cellPCA and classical PCA on contaminated low-rank data.

Usage: python3 scripts/cellpca_vs_pca.py [--reps 10] [--eps 0.05]
"""
import argparse

import numpy as np

from cellwise.breakdown import maxangle
from cellwise.cellpca import classical_pca, fit_cellpca
from cellwise.simulation import low_rank_cells


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--d", type=int, default=10)
    ap.add_argument("--k", type=int, default=2)
    ap.add_argument("--reps", type=int, default=10)
    ap.add_argument("--eps", type=float, default=0.05)
    args = ap.parse_args()

    robust, classical = [], []
    for seed in range(args.reps):
        draw = low_rank_cells(args.n, args.d, args.k, eps_cell=args.eps, seed=seed)
        robust.append(maxangle(fit_cellpca(draw.X, args.k).V, draw.V))
        classical.append(maxangle(classical_pca(draw.X.values, args.k)[1], draw.V))
        print(f"seed {seed:3d}  cellPCA {robust[-1]:.3f}  classical {classical[-1]:.3f}")
    print(f"median max principal angle: cellPCA {np.median(robust):.3f}, "
          f"classical {np.median(classical):.3f}")


if __name__ == "__main__":
    main()
