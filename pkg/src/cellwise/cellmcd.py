"""Cellwise minimum covariance determinant.

Minimizes, over location mu, covariance Sigma and a binary clean-cell
matrix W, the sum over rows of

    ln|Sigma_S| + |S| ln(2 pi) + (x_S - mu_S)' Sigma_S^-1 (x_S - mu_S)

(S = cells of the row with W = 1) plus a penalty q_j for every flagged
observed cell in column j, subject to lambda_min(Sigma) >= a and at
least h clean cells per column. The fit alternates W-updates and EM
steps and never accepts a step that raises the objective.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .data import DataMatrix, gauss_rank_corr, mad_scale, qn_scale
from .detect import ddc
from .errors import ConfigError, NumericalError

LOG_2PI = math.log(2 * math.pi)


@dataclass
class CellMcdConfig:
    h_fraction: float = 0.75
    q: float | np.ndarray = float(chi2.ppf(0.99, 1))
    eig_floor_factor: float = 1e-4
    max_iter: int = 100
    tol: float = 1e-8

    def validate(self):
        if not 0.5 < self.h_fraction <= 1:
            raise ConfigError(f"h_fraction must lie in (0.5, 1], got {self.h_fraction}")
        if np.any(np.asarray(self.q) <= 0):
            raise ConfigError("penalty quantiles q must be positive")
        if self.eig_floor_factor <= 0:
            raise ConfigError("eig_floor_factor must be positive")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be at least 1")


@dataclass
class CellMcdModel:
    mu: np.ndarray
    sigma: np.ndarray
    W: np.ndarray
    objective_trace: list
    imputed: np.ndarray
    std_cell_residuals: np.ndarray
    penalties: np.ndarray
    eig_floor: float
    h: int
    n_iter: int = 0
    column_names: tuple = field(default=())
    observed: np.ndarray | None = None

    @property
    def flags(self) -> np.ndarray:
        """Observed cells flagged as outlying."""
        return self.observed & ~self.W

    def to_dict(self) -> dict:
        return {
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
            "W": self.W.astype(int).tolist(),
            "objective_trace": [float(v) for v in self.objective_trace],
            "penalties": self.penalties.tolist(),
            "eig_floor": self.eig_floor,
            "h": self.h,
            "n_iter": self.n_iter,
        }


# --- conditional Gaussian helpers ---------------------------------------------

def _conditional(x, mu, sigma, given, j):
    """Mean and variance of cell j given the cells in mask ``given``."""
    if not given.any():
        return mu[j], sigma[j, j]
    beta = np.linalg.solve(sigma[np.ix_(given, given)], sigma[given, j])
    m = mu[j] + beta @ (x[given] - mu[given])
    v = sigma[j, j] - sigma[j, given] @ beta
    return m, v


def _cell_cost(x, mu, sigma, clean, j):
    """Likelihood cost of declaring cell j clean, given the other clean cells."""
    others = clean.copy()
    others[j] = False
    m, v = _conditional(x, mu, sigma, others, j)
    if not v > 0:
        raise NumericalError(f"non-positive conditional variance for cell {j}")
    r = x[j] - m
    return math.log(v) + LOG_2PI + r * r / v, r / math.sqrt(v)


def _groups(patterns):
    """Row indices grouped by identical boolean row pattern."""
    keys = np.packbits(patterns, axis=1)
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    for g in range(inverse.max() + 1 if len(inverse) else 0):
        rows = np.flatnonzero(inverse == g)
        yield rows, patterns[rows[0]]


def _group_cell_stats(Xf, obs, W, mu, sigma):
    """Costs and standardized conditional residuals of all observed cells.

    Clean cells are conditioned on the other clean cells of their row,
    flagged cells on all clean cells. Missing cells get NaN.
    """
    n, d = Xf.shape
    cost = np.full((n, d), np.nan)
    sres = np.full((n, d), np.nan)
    combo = np.concatenate([W, obs], axis=1)
    for rows, pat in _groups(combo):
        S = pat[:d]
        F = pat[d:] & ~S
        xs = Xf[rows]
        if S.any():
            P = np.linalg.inv(sigma[np.ix_(S, S)])
            D = (xs[:, S] - mu[S]) @ P
            pd = np.diag(P)
            v = 1.0 / pd
            r = D / pd
            idx = np.flatnonzero(S)
            cost[np.ix_(rows, idx)] = np.log(v) + LOG_2PI + r * r / v
            sres[np.ix_(rows, idx)] = r / np.sqrt(v)
        if F.any():
            fidx = np.flatnonzero(F)
            if S.any():
                B = np.linalg.solve(sigma[np.ix_(S, S)], sigma[np.ix_(S, F)])
                m = mu[F] + (xs[:, S] - mu[S]) @ B
                v = np.diag(sigma)[F] - np.sum(sigma[np.ix_(S, F)] * B, axis=0)
            else:
                m = np.broadcast_to(mu[F], (len(rows), len(fidx)))
                v = np.diag(sigma)[F]
            r = xs[:, F] - m
            cost[np.ix_(rows, fidx)] = np.log(v) + LOG_2PI + r * r / v
            sres[np.ix_(rows, fidx)] = r / np.sqrt(v)
    return cost, sres


# --- objective ------------------------------------------------------------------

def _loglik_terms(Xf, W, mu, sigma):
    """Per-row minus twice the Gaussian log-likelihood of the clean cells."""
    n, d = Xf.shape
    out = np.zeros(n)
    for rows, S in _groups(W):
        if not S.any():
            continue
        sub = sigma[np.ix_(S, S)]
        sign, logdet = np.linalg.slogdet(sub)
        if sign <= 0:
            raise NumericalError(f"singular covariance submatrix in row {rows[0]}")
        diff = Xf[np.ix_(rows, np.flatnonzero(S))] - mu[S]
        md2 = np.sum(diff * np.linalg.solve(sub, diff.T).T, axis=1)
        out[rows] = logdet + S.sum() * LOG_2PI + md2
    return out


def _as_arrays(X):
    if isinstance(X, DataMatrix):
        return X.filled(0.0), X.observed
    X = np.asarray(X, dtype=float)
    obs = np.isfinite(X)
    return np.where(obs, X, 0.0), obs


def cellmcd_objective(X, W, mu, sigma, q) -> float:
    """Penalized observed-likelihood objective; unobserved cells cost nothing."""
    Xf, obs = _as_arrays(X)
    W = np.asarray(W, dtype=bool) & obs
    q = np.broadcast_to(np.asarray(q, dtype=float), (Xf.shape[1],))
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    ll = _loglik_terms(Xf, W, mu, sigma).sum()
    return float(ll + np.sum(q * (obs & ~W).sum(axis=0)))


# --- W update ---------------------------------------------------------------------

def update_W_row(x_row, observed_row, mu, sigma, q, current_W_row=None) -> np.ndarray:
    """Greedy cell toggling for one row until no single toggle helps.

    Cells are visited by decreasing |standardized conditional residual|
    (recomputed at the start of each pass); a toggle is kept only when
    it strictly lowers the row's objective contribution.
    """
    obs = np.asarray(observed_row, dtype=bool)
    x = np.where(obs, np.asarray(x_row, dtype=float), 0.0)
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    q = np.broadcast_to(np.asarray(q, dtype=float), obs.shape)
    w = obs.copy() if current_W_row is None else np.asarray(current_W_row, dtype=bool) & obs
    cells = np.flatnonzero(obs)
    for _ in range(4 * len(cells) + 4):
        resid = {j: abs(_cell_cost(x, mu, sigma, w, j)[1]) for j in cells}
        order = sorted(cells, key=lambda j: (-resid[j], j))
        changed = False
        for j in order:
            cost, _ = _cell_cost(x, mu, sigma, w, j)
            if w[j] and cost > q[j]:
                w[j] = False
                changed = True
            elif not w[j] and cost < q[j]:
                w[j] = True
                changed = True
        if not changed:
            break
    return w


def _w_step(Xf, obs, W, mu, sigma, pen, h):
    cost, _ = _group_cell_stats(Xf, obs, W, mu, sigma)
    with np.errstate(invalid="ignore"):
        unstable = (W & (cost > pen)) | (obs & ~W & (cost < pen))
    W = W.copy()
    for i in np.flatnonzero(unstable.any(axis=1)):
        W[i] = update_W_row(Xf[i], obs[i], mu, sigma, pen, W[i])
    # column constraint: unflag the least outlying cells
    short = np.flatnonzero(W.sum(axis=0) < h)
    if len(short):
        _, sres = _group_cell_stats(Xf, obs, W, mu, sigma)
        for j in short:
            cand = np.flatnonzero(obs[:, j] & ~W[:, j])
            cand = cand[np.argsort(np.abs(sres[cand, j]), kind="stable")]
            need = h - int(W[:, j].sum())
            W[cand[:need], j] = True
    return W


# --- EM update ----------------------------------------------------------------------

def floor_eigenvalues(sigma, a):
    sigma = 0.5 * (sigma + sigma.T)
    vals, vecs = np.linalg.eigh(sigma)
    if vals[0] >= a:
        return sigma
    vals = np.maximum(vals, a)
    out = (vecs * vals) @ vecs.T
    return 0.5 * (out + out.T)


def _e_step(Xf, W, mu, sigma):
    """Conditional expectations of W=0 cells and summed covariance corrections."""
    n, d = Xf.shape
    xhat = Xf.copy()
    corr = np.zeros((d, d))
    for rows, S in _groups(W):
        M = ~S
        if not M.any():
            continue
        if S.any():
            B = np.linalg.solve(sigma[np.ix_(S, S)], sigma[np.ix_(S, M)])
            xhat[np.ix_(rows, np.flatnonzero(M))] = mu[M] + (Xf[np.ix_(rows, np.flatnonzero(S))] - mu[S]) @ B
            C = sigma[np.ix_(M, M)] - sigma[np.ix_(M, S)] @ B
        else:
            xhat[rows] = mu
            C = sigma
        corr[np.ix_(M, M)] += len(rows) * C
    return xhat, corr


def em_update(X, W, mu, sigma, eig_floor=0.0):
    """One EM step treating W = 0 cells as missing, then eigenvalue flooring."""
    Xf, obs = _as_arrays(X)
    W = np.asarray(W, dtype=bool) & obs
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    n = Xf.shape[0]
    xhat, corr = _e_step(Xf, W, mu, sigma)
    mu_new = xhat.mean(axis=0)
    dev = xhat - mu_new
    sigma_new = (dev.T @ dev + corr) / n
    sigma_new = 0.5 * (sigma_new + sigma_new.T)
    if eig_floor > 0:
        sigma_new = floor_eigenvalues(sigma_new, eig_floor)
    return mu_new, sigma_new


# --- fit ----------------------------------------------------------------------------

def _initial_estimate(X: DataMatrix):
    """Coordinatewise medians and a Gaussian-rank covariance of DDC-imputed data."""
    Z = ddc(X).imputed
    mu = np.median(Z, axis=0)
    scales = np.empty(X.d)
    for j in range(X.d):
        s = qn_scale(Z[:, j])
        if not s > 0:
            s = mad_scale(Z[:, j])
        scales[j] = s
    R = gauss_rank_corr(Z)
    sigma = R * np.outer(scales, scales)
    return mu, 0.5 * (sigma + sigma.T)


def effective_penalties(q, sigma) -> np.ndarray:
    """Per-column penalties ``q_j + ln(2 pi) + ln v_j``, v_j = 1 / (sigma^-1)_jj.

    With these, a cell of an otherwise clean row is flagged exactly when
    its squared standardized conditional residual exceeds q_j.
    """
    sigma = np.asarray(sigma, dtype=float)
    cond_var = 1.0 / np.diag(np.linalg.inv(sigma))
    q = np.broadcast_to(np.asarray(q, dtype=float), cond_var.shape)
    return q + LOG_2PI + np.log(cond_var)


def fit_cellmcd(X, cfg: CellMcdConfig | None = None) -> CellMcdModel:
    """Block-coordinate descent on the cellMCD objective.

    The user-facing ``q`` is a chi-square quantile; the penalty actually
    used for column j is ``q_j + ln(2 pi) + ln v_j`` with v_j the
    conditional variance of x_j given all other variables under the
    initial estimate, so that a cell is flagged when its squared
    standardized conditional residual exceeds roughly q_j. This keeps the
    fit equivariant under per-column rescaling.
    """
    cfg = cfg or CellMcdConfig()
    cfg.validate()
    if not isinstance(X, DataMatrix):
        X = DataMatrix.from_array(X)
    n, d = X.shape
    h = math.ceil(cfg.h_fraction * n)
    counts = X.observed.sum(axis=0)
    for j in range(d):
        if counts[j] < h:
            raise ConfigError(f"column {X.column_names[j]!r} has {counts[j]} observed cells, fewer than h = {h}")

    Xf, obs = X.filled(0.0), X.observed
    mu, sigma = _initial_estimate(X)
    diag = np.diag(sigma)
    a = cfg.eig_floor_factor * float(np.median(diag))
    if not a > 0:
        # zero-spread initial estimate; keep the floor tiny relative to the data
        a = cfg.eig_floor_factor * np.finfo(float).eps * max(1.0, float(np.max(np.abs(Xf))) ** 2)
    sigma = floor_eigenvalues(sigma, a)
    pen = effective_penalties(cfg.q, sigma)
    # per-cell absolute tolerance: rescaling a column shifts the objective by a constant
    stop = cfg.tol * max(1, int(obs.sum()))

    W = obs.copy()
    obj = cellmcd_objective(X, W, mu, sigma, pen)
    trace = [obj]
    it = 0
    for it in range(1, cfg.max_iter + 1):
        prev = obj
        W_new = _w_step(Xf, obs, W, mu, sigma, pen, h)
        obj_w = cellmcd_objective(X, W_new, mu, sigma, pen)
        if obj_w <= obj:
            W, obj = W_new, obj_w
        mu_new, sigma_new = em_update(X, W, mu, sigma, a)
        obj_e = cellmcd_objective(X, W, mu_new, sigma_new, pen)
        if obj_e <= obj:
            mu, sigma, obj = mu_new, sigma_new, obj_e
        trace.append(obj)
        if prev - obj <= stop:
            break

    xhat, _ = _e_step(Xf, W, mu, sigma)
    imputed = np.where(W, X.values, xhat)
    _, sres = _group_cell_stats(Xf, obs, W, mu, sigma)
    return CellMcdModel(mu, sigma, W, trace, imputed, sres, pen, a, h, it, X.column_names, obs)


def kl_divergence(sigma_hat, sigma_true) -> float:
    """KL(N(0, sigma_true) || N(0, sigma_hat))."""
    d = sigma_true.shape[0]
    P = np.linalg.solve(sigma_hat, sigma_true)
    _, ld = np.linalg.slogdet(P)
    return 0.5 * (np.trace(P) - d - ld)
