"""Cellwise and casewise robust PCA with a nested bounded-loss objective.

The fit minimizes

    (s2^2 / m) sum_i m_i rho2(t_i / s2),
    t_i^2 = (1 / m_i) sum_j m_ij s1_j^2 rho1(r_ij / s1_j),

over a rank-k approximation mu + U V' of X, where r_ij are cell
residuals, m_ij marks observed cells, and the scales s1_j, s2 are
M-scales fixed from the initial fit. The composite loss is concave in
the squared residuals, so each weighted least squares sweep with
weights recomputed at the current fit cannot increase it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .data import DataMatrix, qn_scale
from .detect import ddc
from .errors import ConfigError, DegenerateScaleError, ZeroScaleError
from .kernels import DEFAULT_RHO, RhoTanhParams, mscale, rho_tanh, weight_tanh


@dataclass
class CellPcaConfig:
    rho1: RhoTanhParams = DEFAULT_RHO
    rho2: RhoTanhParams = DEFAULT_RHO
    max_iter: int = 100
    tol: float = 1e-6
    mcd_rotation: bool = True
    h_fraction: float = 0.75
    n_starts: int = 50
    seed: int = 0


@dataclass
class PcaModel:
    mu: np.ndarray
    V: np.ndarray
    U: np.ndarray
    sigma1: np.ndarray
    sigma2: float
    w_cell: np.ndarray
    w_case: np.ndarray
    fitted: np.ndarray
    imputed: np.ndarray
    objective_trace: list
    total_deviation: np.ndarray
    std_residuals: np.ndarray
    n_iter: int = 0
    warnings: list = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.V.shape[1]

    def project(self, rows) -> np.ndarray:
        """Orthogonal projection of rows onto the fitted affine subspace."""
        rows = np.atleast_2d(rows)
        return self.mu + (rows - self.mu) @ self.V @ self.V.T

    def to_dict(self) -> dict:
        def clean(a):
            a = np.asarray(a, dtype=float)
            return np.where(np.isfinite(a), a, None).tolist()
        return {
            "k": self.k,
            "mu": self.mu.tolist(),
            "loadings": self.V.tolist(),
            "scores": self.U.tolist(),
            "sigma1": self.sigma1.tolist(),
            "sigma2": self.sigma2,
            "w_cell": self.w_cell.tolist(),
            "w_case": self.w_case.tolist(),
            "fitted": self.fitted.tolist(),
            "imputed": self.imputed.tolist(),
            "std_residuals": clean(self.std_residuals),
            "total_deviation": self.total_deviation.tolist(),
            "objective_trace": [float(v) for v in self.objective_trace],
            "n_iter": self.n_iter,
        }


def _arrays(X):
    if isinstance(X, DataMatrix):
        return X.filled(0.0), X.observed.astype(float)
    X = np.asarray(X, dtype=float)
    obs = np.isfinite(X)
    return np.where(obs, X, 0.0), obs.astype(float)


def _deviations(R, M, sigma1, rho1):
    """t_i and per-cell rho1 terms; rows without observed cells get t = 0."""
    terms = M * sigma1 ** 2 * rho_tanh(R / sigma1, rho1)
    mi = M.sum(axis=1)
    t2 = np.divide(terms.sum(axis=1), mi, out=np.zeros(len(mi)), where=mi > 0)
    return np.sqrt(t2), mi


def _objective(R, M, sigma1, sigma2, rho1, rho2):
    t, mi = _deviations(R, M, sigma1, rho1)
    m = mi.sum()
    return float(sigma2 ** 2 / m * np.sum(mi * rho_tanh(t / sigma2, rho2)))


def cellpca_objective(X, mu, V, U, sigma1, sigma2, rho1=DEFAULT_RHO, rho2=DEFAULT_RHO) -> float:
    Xf, M = _arrays(X)
    R = (Xf - mu - U @ V.T) * M
    return _objective(R, M, np.asarray(sigma1, dtype=float), float(sigma2), rho1, rho2)


def _weights(R, M, sigma1, sigma2, rho1, rho2):
    t, _ = _deviations(R, M, sigma1, rho1)
    w_cell = weight_tanh(R / sigma1, rho1)
    w_case = weight_tanh(t / sigma2, rho2)
    return w_cell, w_case, t


def _solve_batched(A, b):
    # pseudo-inverse gives a least-squares minimizer even for singular blocks
    return np.einsum("nkl,nl->nk", np.linalg.pinv(A), b)


def _orthonormalize(U, V):
    Q, Rr = np.linalg.qr(V)
    U = U @ Rr.T
    signs = np.sign(Q[np.argmax(np.abs(Q), axis=0), np.arange(Q.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs, Q * signs


def wls_sweep(Xf, omega, mu, U, V):
    """One pass of exact block updates of the weighted least-squares fit."""
    colw = omega.sum(axis=0)
    resid = Xf - U @ V.T
    mu = np.where(colw > 0, np.divide((omega * resid).sum(axis=0), colw, out=np.zeros_like(colw),
                                      where=colw > 0), mu)
    C = Xf - mu
    A = np.einsum("jk,ij,jl->ikl", V, omega, V)
    b = np.einsum("jk,ij->ik", V, omega * C)
    U = _solve_batched(A, b)
    A = np.einsum("ik,ij,il->jkl", U, omega, U)
    b = np.einsum("ik,ij->jk", U, omega * C)
    V = _solve_batched(A, b)
    U, V = _orthonormalize(U, V)
    return mu, U, V


def _rescue_scores(Xf, M, mu, U, V, sigma1, rho1):
    """Per-row switch to the unweighted projection scores when that lowers t_i.

    Rows whose cells all carry zero weight cannot move in a weighted
    sweep; the objective is separable in the rows of U, so this step
    never increases it.
    """
    C = (Xf - mu) * M
    A = np.einsum("jk,ij,jl->ikl", V, M, V)
    U_ls = _solve_batched(A, np.einsum("jk,ij->ik", V, C))
    t_old, _ = _deviations((Xf - mu - U @ V.T) * M, M, sigma1, rho1)
    t_new, _ = _deviations((Xf - mu - U_ls @ V.T) * M, M, sigma1, rho1)
    better = t_new < t_old
    if not better.any():
        return U
    U = U.copy()
    U[better] = U_ls[better]
    return U


def _cell_scale(r, column, rho):
    try:
        return mscale(r, rho)
    except ZeroScaleError:
        s = qn_scale(column) if len(column) >= 2 else 0.0
        if not s > 0:
            raise
        return 1e-12 * s


def fast_mcd(U, h_fraction=0.75, n_starts=50, rng_seed=0):
    """Random-start C-step search for the h-subset of smallest scatter determinant.

    Returns (center, covariance, determinant) of the best subset found.
    """
    U = np.atleast_2d(np.asarray(U, dtype=float))
    n, k = U.shape
    if n <= 2 * k:
        raise ConfigError(f"MCD on scores needs n > 2k, got n={n}, k={k}")
    h = max(math.ceil(h_fraction * n), k + 1)
    rng = np.random.default_rng(rng_seed)
    best = (np.inf, None, None)
    for _ in range(n_starts):
        subset = list(rng.choice(n, k + 1, replace=False))
        while True:
            center = U[subset].mean(axis=0)
            cov = np.atleast_2d(np.cov(U[subset].T, bias=True))
            if np.linalg.det(cov) > 0 or len(subset) >= n:
                break
            subset.append(int(rng.choice(np.setdiff1d(np.arange(n), subset))))
        det = np.inf
        for _ in range(100):
            if not np.linalg.det(cov) > 0:
                break
            diff = U - center
            md = np.sum(diff * np.linalg.solve(cov, diff.T).T, axis=1)
            keep = np.argsort(md, kind="stable")[:h]
            center = U[keep].mean(axis=0)
            cov = np.atleast_2d(np.cov(U[keep].T, bias=True))
            new_det = np.linalg.det(cov)
            if new_det >= det:
                break
            det = new_det
        if det < best[0]:
            best = (det, center, cov)
    det, center, cov = best
    if center is None:
        center = np.median(U, axis=0)
        cov = np.atleast_2d(np.cov(U.T, bias=True))
        det = float(np.linalg.det(cov))
    return center, cov, float(det)


def mcd_on_scores(U, h_fraction=0.75, n_starts=50, rng_seed=0):
    """FastMCD on the score matrix.

    Returns the eigenvector rotation of the MCD scatter (largest
    eigenvalue first, largest-magnitude entry of each column positive)
    and the MCD center.
    """
    center, cov, _ = fast_mcd(U, h_fraction, n_starts, rng_seed)
    k = cov.shape[0]
    vals, vecs = np.linalg.eigh(cov)
    vecs = vecs[:, np.argsort(-vals, kind="stable")]
    signs = np.sign(vecs[np.argmax(np.abs(vecs), axis=0), np.arange(k)])
    signs[signs == 0] = 1.0
    return vecs * signs, center


def mcd_exhaustive_det(U, h):
    """Smallest covariance determinant over all h-subsets (test oracle, tiny n only)."""
    U = np.atleast_2d(U)
    best = np.inf
    for sub in combinations(range(len(U)), h):
        best = min(best, np.linalg.det(np.atleast_2d(np.cov(U[list(sub)].T, bias=True))))
    return best


def classical_pca(X, k):
    """Mean and top-k right singular vectors."""
    X = np.asarray(X, dtype=float)
    mu = X.mean(axis=0)
    _, _, Vt = np.linalg.svd(X - mu, full_matrices=False)
    return mu, Vt[:k].T


def fit_cellpca(X, k, cfg: CellPcaConfig | None = None) -> PcaModel:
    """Robust rank-k fit by iteratively reweighted least squares.

    Starts from classical PCA of the DDC-imputed data, fixes the cell
    and case M-scales from that fit, and iterates weighted least squares
    sweeps until the relative objective change falls below ``tol``.
    """
    cfg = cfg or CellPcaConfig()
    if not isinstance(X, DataMatrix):
        X = DataMatrix.from_array(X)
    n, d = X.shape
    if not 1 <= k < d:
        raise ConfigError(f"need 1 <= k < d, got k={k}, d={d}")
    if n <= k:
        raise ConfigError(f"need n > k, got n={n}, k={k}")
    Xf, M = _arrays(X)
    rho1, rho2 = cfg.rho1, cfg.rho2

    Z = ddc(X).imputed if n >= 10 else np.where(X.observed, X.values, np.nanmedian(X.values, axis=0))
    mu, V = classical_pca(Z, k)
    U = (Z - mu) @ V
    U, V = _orthonormalize(U, V)

    R = (Xf - mu - U @ V.T) * M
    sigma1 = np.empty(d)
    for j in range(d):
        obs = X.observed[:, j]
        col = X.column(j)
        if len(col) < 2 or not qn_scale(col) > 0:
            raise DegenerateScaleError(X.column_names[j], "column has no spread")
        sigma1[j] = _cell_scale(R[obs, j], col, rho1)
    t, mi = _deviations(R, M, sigma1, rho1)
    try:
        sigma2 = mscale(t[mi > 0], rho2)
    except ZeroScaleError:
        sigma2 = 1e-12 * float(np.median(sigma1))

    obj = _objective(R, M, sigma1, sigma2, rho1, rho2)
    trace = [obj]
    it = 0
    for it in range(1, cfg.max_iter + 1):
        w_cell, w_case, _ = _weights(R, M, sigma1, sigma2, rho1, rho2)
        omega = M * w_case[:, None] * w_cell
        cand = wls_sweep(Xf, omega, mu, U, V)
        R_c = (Xf - cand[0] - cand[1] @ cand[2].T) * M
        obj_c = _objective(R_c, M, sigma1, sigma2, rho1, rho2)
        step = 1.0
        while obj_c > obj and step > 2 ** -10:
            step /= 2
            mu_c = mu + step * (cand[0] - mu)
            U_c, V_c = _orthonormalize(U + step * (cand[1] - U), V + step * (cand[2] - V))
            cand = (mu_c, U_c, V_c)
            R_c = (Xf - mu_c - U_c @ V_c.T) * M
            obj_c = _objective(R_c, M, sigma1, sigma2, rho1, rho2)
        if obj_c > obj:
            break
        prev = obj
        mu, U, V = cand
        U = _rescue_scores(Xf, M, mu, U, V, sigma1, rho1)
        R = (Xf - mu - U @ V.T) * M
        obj = _objective(R, M, sigma1, sigma2, rho1, rho2)
        trace.append(obj)
        if prev - obj <= cfg.tol * prev:
            break

    warnings = []
    w_cell, w_case, t = _weights(R, M, sigma1, sigma2, rho1, rho2)
    omega = M * w_case[:, None] * w_cell
    fitted = mu + U @ V.T
    std_res = np.where(X.observed, R / sigma1, np.nan)
    imputed = omega * Xf + (1 - omega) * fitted
    # re-fit scores from the imputed rows so each imputed row projects onto its fitted row
    U = (imputed - mu) @ V
    if cfg.mcd_rotation and n > 2 * k and k <= 10:
        rot, center = mcd_on_scores(U, cfg.h_fraction, cfg.n_starts, cfg.seed)
        mu = mu + V @ center
        U = (U - center) @ rot
        V = V @ rot
    else:
        if cfg.mcd_rotation:
            warnings.append("MCD rotation skipped (needs n > 2k and k <= 10)")
        c = U.mean(axis=0)
        _, _, Wt = np.linalg.svd(U - c, full_matrices=False)
        mu = mu + V @ c
        U = (U - c) @ Wt.T
        V = V @ Wt.T
    fitted = mu + U @ V.T
    return PcaModel(mu, V, U, sigma1, float(sigma2), w_cell, w_case, fitted, imputed, trace,
                    t / sigma2, std_res, it, warnings)
