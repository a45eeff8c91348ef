"""Seeded simulation designs shared by the test suite and the experiment scripts."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .breakdown import ContaminationSpec, OutlierGenerator, contaminate
from .data import DataMatrix


def ar_covariance(d, rho=0.5) -> np.ndarray:
    idx = np.arange(d)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def equicorrelation(d, rho=0.5) -> np.ndarray:
    return (1 - rho) * np.eye(d) + rho * np.ones((d, d))


def cell_rates(W_clean, truth):
    """(recall, false-flag rate) of a clean-cell mask against truth labels."""
    flagged = ~W_clean & (truth != "missing")
    bad = truth == "cell"
    good = truth == "clean"
    recall = flagged[bad].mean() if bad.any() else 1.0
    false_rate = flagged[good].mean() if good.any() else 0.0
    return float(recall), float(false_rate)


@dataclass
class Draw:
    X: DataMatrix
    truth: np.ndarray
    clean: np.ndarray


def gaussian_cells(n, d, sigma, eps_cell, value, seed) -> Draw:
    """N(0, sigma) rows with independent cellwise point-mass contamination."""
    rng = np.random.default_rng(seed)
    clean = rng.multivariate_normal(np.zeros(d), sigma, size=n)
    spec = ContaminationSpec(eps_cell=eps_cell, outlier_gen=OutlierGenerator("point", value),
                             seed=seed + 10_000)
    X, truth = contaminate(clean, spec)
    return Draw(X, truth, clean)


@dataclass
class SubspaceDraw(Draw):
    V: np.ndarray


def low_rank_cells(n=200, d=10, k=2, score_sd=(4.0, 2.0), noise_sd=0.5,
                   eps_cell=0.05, value=10.0, seed=0) -> SubspaceDraw:
    """Rank-k signal plus isotropic noise, then cellwise contamination."""
    rng = np.random.default_rng(seed)
    V, _ = np.linalg.qr(rng.standard_normal((d, k)))
    scores = rng.standard_normal((n, k)) * np.asarray(score_sd)[:k]
    clean = scores @ V.T + noise_sd * rng.standard_normal((n, d))
    spec = ContaminationSpec(eps_cell=eps_cell, outlier_gen=OutlierGenerator("point", value),
                             seed=seed + 10_000)
    X, truth = contaminate(clean, spec)
    return SubspaceDraw(X, truth, clean, V)


REG_BETA = np.array([1.0, -2.0, 0.5])
REG_COV = np.array([[1.0, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 1.0]])
REG_ALPHA = 1.0


def regression_cells(n=500, eps_cell=0.0, value=10.0, noise_sd=0.5, seed=0):
    """(X contaminated, X clean, y) for y = 1 + x'beta + noise with correlated x."""
    rng = np.random.default_rng(seed)
    Xc = rng.multivariate_normal(np.zeros(3), REG_COV, size=n)
    y = REG_ALPHA + Xc @ REG_BETA + noise_sd * rng.standard_normal(n)
    spec = ContaminationSpec(eps_cell=eps_cell, outlier_gen=OutlierGenerator("point", value),
                             seed=seed + 10_000)
    X, _ = contaminate(Xc, spec)
    return X.values, Xc, y


def ols(X, y):
    A = np.column_stack([np.ones(len(X)), X])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return coef[0], coef[1:]


def correlated_pair(n=200, rho=0.95, marginal=1.3, conditional_sd=6.0, seed=0):
    """Bivariate normal sample whose last row breaks the correlation only.

    The last row has first coordinate ``marginal`` and second coordinate
    ``conditional_sd`` conditional standard deviations below its
    regression prediction, while both stay within 2 marginal SDs.
    """
    rng = np.random.default_rng(seed)
    X = rng.multivariate_normal([0.0, 0.0], [[1.0, rho], [rho, 1.0]], size=n)
    X[-1] = [marginal, rho * marginal - conditional_sd * math.sqrt(1 - rho * rho)]
    return DataMatrix.from_array(X, column_names=["x1", "x2"])
