"""Robust pairwise covariance and the graphical lasso."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import (DataMatrix, column_scales, gauss_rank_corr,
                   spearman_corr)
from .errors import ConfigError, DataError, DegenerateScaleError

SUPPORT_TOL = 1e-10


@dataclass
class PrecisionModel:
    sigma_hat: np.ndarray
    theta: np.ndarray
    lam: float
    dual_gap: float
    support: np.ndarray
    n_iter: int = 0
    converged: bool = True
    warnings: list = field(default_factory=list)

    @property
    def objective(self) -> float:
        return glasso_objective(self.sigma_hat, self.theta, self.lam)

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "theta": self.theta.tolist(),
            "support": self.support.astype(int).tolist(),
            "objective": self.objective,
            "dual_gap": self.dual_gap,
            "n_iter": self.n_iter,
            "converged": self.converged,
            "warnings": list(self.warnings),
        }


def rank_correlation(X: DataMatrix, corr="gauss_rank") -> np.ndarray:
    if corr == "gauss_rank":
        return gauss_rank_corr(X.values, X.observed)
    if corr == "spearman":
        rs = spearman_corr(X.values, X.observed)
        R = 2.0 * np.sin(np.pi * rs / 6.0)
        np.fill_diagonal(R, 1.0)
        return R
    raise ConfigError(f"unknown correlation {corr!r}")


def pairwise_cov(X: DataMatrix, scale="qn", corr="gauss_rank") -> np.ndarray:
    """s(X_j) s(X_l) r(X_j, X_l) with r on pairwise-complete rows."""
    if not isinstance(X, DataMatrix):
        X = DataMatrix.from_array(X)
    _, s = column_scales(X, scale)
    for j, sj in enumerate(s):
        if not sj > 0:
            raise DegenerateScaleError(X.column_names[j])
    R = rank_correlation(X, corr)
    S = R * np.outer(s, s)
    return 0.5 * (S + S.T)


def psd_fix(S, floor=1e-6) -> np.ndarray:
    """Shift S by a multiple of the identity so its smallest eigenvalue is at least ``floor``."""
    S = np.asarray(S, dtype=float)
    lam_min = np.linalg.eigvalsh(S)[0]
    if lam_min < floor:
        return S + (floor - lam_min) * np.eye(S.shape[0])
    return S


def glasso_objective(S, theta, lam) -> float:
    """tr(S Theta) - log det Theta + lam * sum_{j != l} |Theta_jl|."""
    sign, logdet = np.linalg.slogdet(theta)
    if sign <= 0:
        return np.inf
    off = np.abs(theta).sum() - np.abs(np.diag(theta)).sum()
    return float(np.sum(S * theta) - logdet + lam * off)


def _soft(x, t):
    return np.sign(x) * max(abs(x) - t, 0.0)


def _lasso_cd(V, s, lam, beta, tol, max_iter):
    """min_b 0.5 b'Vb - b's + lam |b|_1 by cyclic coordinate descent."""
    p = len(s)
    grad = s - V @ beta
    for _ in range(max_iter):
        delta = 0.0
        for k in range(p):
            old = beta[k]
            new = _soft(grad[k] + V[k, k] * old, lam) / V[k, k]
            if new != old:
                grad -= V[:, k] * (new - old)
                beta[k] = new
                delta = max(delta, abs(new - old))
        if delta < tol:
            break
    return beta


def _stationarity(S, theta, lam):
    W = np.linalg.inv(theta)
    G = W - S
    off = ~np.eye(S.shape[0], dtype=bool)
    nz = off & (np.abs(theta) > SUPPORT_TOL)
    z = off & ~nz
    res = np.abs(np.diag(G)).max() if S.shape[0] else 0.0
    if nz.any():
        # W_jl - S_jl = lam * sign(theta_jl) at a solution
        res = max(res, np.abs(G[nz] - lam * np.sign(theta[nz])).max())
    if z.any():
        res = max(res, np.maximum(np.abs(G[z]) - lam, 0.0).max())
    return float(res)


def glasso(S, lam, tol=1e-6, max_iter=500) -> PrecisionModel:
    """Graphical lasso with an off-diagonal penalty.

    Block coordinate descent on the working covariance W = Theta^-1: one
    row/column at a time, each a lasso problem solved by cyclic
    coordinate descent. The diagonal of W stays equal to diag(S) because
    the diagonal of Theta is not penalized.
    """
    S = np.asarray(S, dtype=float)
    d = S.shape[0]
    if S.shape != (d, d) or not np.allclose(S, S.T, atol=1e-12 * max(1.0, np.abs(S).max())):
        raise DataError("S must be a symmetric square matrix")
    if lam < 0:
        raise ConfigError("lambda must be non-negative")
    S = 0.5 * (S + S.T)
    if np.any(np.diag(S) <= 0) or np.linalg.eigvalsh(S)[0] < -1e-10 * np.abs(np.diag(S)).max():
        raise DataError("S must be positive semidefinite with a positive diagonal")

    W = S.copy()
    B = np.zeros((d, d))  # column j holds the lasso coefficients of block j
    thresh = tol * np.mean(np.abs(np.diag(S)))
    converged = d == 1
    it = 0
    for it in range(1, max_iter + 1):
        if d == 1:
            break
        change = 0.0
        for j in range(d):
            idx = np.r_[0:j, j + 1:d]
            V = W[np.ix_(idx, idx)]
            beta = _lasso_cd(V, S[idx, j], lam, B[idx, j].copy(), tol=thresh * 1e-3, max_iter=10000)
            B[idx, j] = beta
            w12 = V @ beta
            change = max(change, np.abs(w12 - W[idx, j]).max())
            W[idx, j] = w12
            W[j, idx] = w12
        if change < thresh:
            converged = True
            break

    theta = np.zeros((d, d))
    for j in range(d):
        idx = np.r_[0:j, j + 1:d]
        beta = B[idx, j]
        tjj = 1.0 / (W[j, j] - W[idx, j] @ beta)
        theta[j, j] = tjj
        theta[idx, j] = -beta * tjj
    theta = 0.5 * (theta + theta.T)
    warnings = [] if converged else [f"no convergence after {max_iter} sweeps"]
    support = (np.abs(theta) > SUPPORT_TOL) & ~np.eye(d, dtype=bool)
    return PrecisionModel(S, theta, float(lam), _stationarity(S, theta, lam), support,
                          it, converged, warnings)
