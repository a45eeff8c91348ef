"""Contamination simulator and adversarial breakdown experiments.

``contaminate`` draws the mixed casewise / cellwise / missingness model.
``hyperplane_attack`` moves every row onto a hyperplane by editing one
cell per row, which is the construction behind the ~1/d cellwise
breakdown bounds for location, covariance and PCA estimators that
respect affine structure. ``empirical_breakdown`` runs magnitude sweeps
against a named estimator and reports whether its response diverges.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .cellmcd import CellMcdConfig, fit_cellmcd
from .cellpca import CellPcaConfig, fit_cellpca
from .data import DataMatrix
from .errors import ConfigError, DataError
from .regression import fit_cellreg

CLEAN, CASE, CELL, MISSING = "clean", "case", "cell", "missing"


@dataclass
class OutlierGenerator:
    """Distribution of replacement values: a point mass or a shifted normal."""

    kind: str = "point"
    value: float = 10.0
    scale: float = 1.0

    def draw(self, rng, shape):
        if self.kind == "point":
            return np.full(shape, float(self.value))
        if self.kind == "shifted_normal":
            return self.value + self.scale * rng.standard_normal(shape)
        raise ConfigError(f"unknown outlier generator {self.kind!r}")


@dataclass
class ContaminationSpec:
    eps_case: float = 0.0
    eps_cell: float | np.ndarray = 0.0
    eps_obs: float | np.ndarray = 0.0
    outlier_gen: OutlierGenerator = field(default_factory=OutlierGenerator)
    seed: int = 0

    def rates(self, d):
        cell = np.broadcast_to(np.asarray(self.eps_cell, dtype=float), (d,))
        obs = np.broadcast_to(np.asarray(self.eps_obs, dtype=float), (d,))
        for r in (np.asarray(self.eps_case), cell, obs):
            if np.any(r < 0) or np.any(r > 1):
                raise ConfigError("contamination rates must lie in [0, 1]")
        return float(self.eps_case), cell, obs


def contaminate(X_clean, spec: ContaminationSpec):
    """Apply A = A_case * A_cell * A_obs; returns (X_eps, truth labels)."""
    if not isinstance(X_clean, DataMatrix):
        X_clean = DataMatrix.from_array(X_clean)
    n, d = X_clean.shape
    eps_case, eps_cell, eps_obs = spec.rates(d)
    rng = np.random.default_rng(spec.seed)
    # draw order is fixed so a seed always reproduces the same matrix
    case_out = rng.random(n) < eps_case
    cell_out = rng.random((n, d)) < eps_cell
    missing = rng.random((n, d)) < eps_obs
    Z = spec.outlier_gen.draw(rng, (n, d))

    values = X_clean.values.copy()
    replace = case_out[:, None] | cell_out
    values[replace] = Z[replace]
    observed = X_clean.observed & ~missing
    values[~observed] = np.nan

    truth = np.full((n, d), CLEAN, dtype="<U7")
    truth[cell_out] = CELL
    truth[np.broadcast_to(case_out[:, None], (n, d))] = CASE
    truth[~observed] = MISSING
    return DataMatrix(values, observed, X_clean.column_names), truth


def default_normal(d):
    return np.ones(d) / math.sqrt(d)


def hyperplane_attack(X, normal=None, offset=None, anchor_row=None, max_per_column=None):
    """Move rows onto {x : normal'x = offset} by editing one cell per row.

    Rows are dealt out in index order: the first ceil(n'/d) go to column
    1, the next to column 2, and so on, where n' counts the rows being
    moved. With ``anchor_row`` the hyperplane passes through that row,
    which stays untouched, so at most ceil((n-1)/d) cells change per
    column. ``max_per_column`` limits how many rows each column moves.

    Returns the attacked DataMatrix and the per-column change counts.
    """
    if not isinstance(X, DataMatrix):
        X = DataMatrix.from_array(X)
    if not X.observed.all():
        raise DataError("hyperplane_attack needs a fully observed matrix")
    n, d = X.shape
    normal = default_normal(d) if normal is None else np.asarray(normal, dtype=float)
    if normal.shape != (d,):
        raise ConfigError(f"normal must have {d} components")
    if np.any(normal == 0):
        raise ConfigError("every component of the normal must be nonzero")
    x = X.values.copy()
    rows = [i for i in range(n) if i != anchor_row]
    if anchor_row is not None:
        offset = float(normal @ x[anchor_row])
    elif offset is None:
        # a plane beyond the data: shift past every coordinate's range
        span = x.max(axis=0) - x.min(axis=0)
        offset = float(normal @ (x.max(axis=0) + span + 1.0))
    per = math.ceil(len(rows) / d)
    if max_per_column is not None:
        per = min(per, int(max_per_column))
    changed = np.zeros(d, dtype=int)
    scale = max(1.0, abs(offset), float(np.abs(x).max()))
    for pos, i in enumerate(rows):
        j = pos // per if per > 0 else d
        if j >= d:
            break
        gap = offset - normal @ x[i]
        if abs(gap) <= 1e-14 * scale:
            continue
        x[i, j] += gap / normal[j]
        changed[j] += 1
    return DataMatrix(x, X.observed, X.column_names), changed


def _orthonormal_basis(B, name):
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    Q, R = np.linalg.qr(B)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag.min() <= 1e-12 * max(1.0, diag.max()):
        raise ConfigError(f"basis {name} is rank deficient")
    return Q


def maxangle(A, B) -> float:
    """Largest principal angle from span(A) to span(B), in [0, pi/2].

    A and B are d x k bases (points of affine subspaces are irrelevant
    once both are shifted through the origin). Small angles use the
    sine formula, which stays accurate near 0 where arccos does not.
    """
    QA = _orthonormal_basis(A, "A")
    QB = _orthonormal_basis(B, "B")
    if QA.shape[0] != QB.shape[0]:
        raise ConfigError("subspaces live in different dimensions")
    if QA.shape[1] > QB.shape[1]:
        return math.pi / 2
    M = QB.T @ QA
    s = float(np.linalg.norm(QA - QB @ M, 2))
    if s * s <= 0.5:
        return math.asin(min(s, 1.0))
    c = float(np.linalg.svd(M, compute_uv=False).min())
    return math.acos(min(c, 1.0))


# --- empirical breakdown ----------------------------------------------------------

@dataclass
class AttackReport:
    estimator_name: str
    m_per_column: int
    magnitude_sweep: list
    displacement: list
    broke: bool
    bound: float
    placement: str = "random"
    cells_changed: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "estimator_name": self.estimator_name,
            "placement": self.placement,
            "m_per_column": self.m_per_column,
            "magnitude_sweep": [float(v) for v in self.magnitude_sweep],
            "displacement": [float(v) for v in self.displacement],
            "broke": bool(self.broke),
            "bound": float(self.bound),
            "cells_changed": [int(v) for v in self.cells_changed],
        }


def _eig_extremes(S):
    vals = np.linalg.eigvalsh(S)
    return vals[-1], vals[0]


@dataclass
class _Estimator:
    kind: str  # location | covariance | regression | subspace
    fit: Callable
    bound: Callable


def _estimators(options):
    cfg = CellMcdConfig(h_fraction=options.get("h_fraction", 0.75))
    k = options.get("k")
    pca_cfg = CellPcaConfig(seed=options.get("seed", 0))

    def h_cap(n, d):
        return (n - math.ceil(cfg.h_fraction * n) + 1) / n

    def pca_fit(X):
        kk = k if k is not None else min(2, X.d - 1)
        return fit_cellpca(X, kk, pca_cfg).V

    def reg_fit(X):
        model = fit_cellreg(X.values[:, :-1], X.values[:, -1], cfg)
        return np.r_[model.alpha, model.beta]

    return {
        "coordwise_median": _Estimator("location", lambda X: np.nanmedian(X.values, axis=0),
                                       lambda n, d: math.floor((n + 1) / 2) / n),
        "sample_mean": _Estimator("location", lambda X: np.nanmean(X.values, axis=0),
                                  lambda n, d: math.ceil(n / d) / n),
        "sample_cov": _Estimator("covariance", lambda X: np.cov(X.values.T, bias=True),
                                 lambda n, d: math.ceil((n - 1) / d) / n),
        "cellmcd": _Estimator("location", lambda X: fit_cellmcd(X, cfg).mu, h_cap),
        "cellpca": _Estimator("subspace", pca_fit, lambda n, d: math.ceil((n - 1) / d) / n),
        "cellreg": _Estimator("regression", reg_fit, h_cap),
    }


ESTIMATORS = ("coordwise_median", "sample_mean", "sample_cov", "cellmcd", "cellpca", "cellreg")
IMPLOSION_RATIO = 1e-8
DIVERGENCE_RATIO = 10.0


def _place(X, m, magnitude, placement, rng):
    n, d = X.shape
    x = X.values.copy()
    changed = np.zeros(d, dtype=int)
    if m == 0:
        return X, changed
    if placement == "random":
        for j in range(d):
            rows = rng.choice(n, m, replace=False)
            x[rows, j] = magnitude
            changed[j] = m
    elif placement == "single_column":
        x[:m, 0] = magnitude
        changed[0] = m
    elif placement == "hyperplane":
        return hyperplane_attack(X, anchor_row=0, max_per_column=m)
    else:
        raise ConfigError(f"unknown placement {placement!r}")
    return DataMatrix(x, X.observed, X.column_names), changed


def _response(est, base, attacked, kind):
    if kind in ("location", "regression"):
        return float(np.linalg.norm(attacked - base))
    if kind == "covariance":
        # worse of explosion (top eigenvalue) and implosion (bottom eigenvalue)
        bmax, bmin = _eig_extremes(base)
        lmax, lmin = _eig_extremes(attacked)
        if lmin <= IMPLOSION_RATIO * lmax:
            return math.inf
        return float(max(lmax / bmax, bmin / lmin))
    return maxangle(attacked, base)


def empirical_breakdown(estimator, X, m_values=(1,), magnitudes=(1e3, 1e6, 1e9),
                        placement="random", seed=0, options=None) -> list[AttackReport]:
    """Magnitude sweeps for each m in ``m_values``.

    Displacement is the norm of the change for location and regression
    estimates, max(lambda_1 / lambda_1_clean, lambda_d_clean / lambda_d)
    for covariance estimates (explosion or implosion), and the maxangle to the clean-data subspace for PCA.
    A run counts as broken when the response still grows by a factor of
    at least 10 over the last decade step of the sweep, when a
    covariance estimate implodes (lambda_d <= 1e-8 lambda_1), or when a
    subspace reaches a right angle.
    """
    options = dict(options or {})
    options.setdefault("seed", seed)
    table = _estimators(options)
    if estimator not in table:
        raise ConfigError(f"unsupported estimator {estimator!r}; choose from {', '.join(ESTIMATORS)}")
    if not isinstance(X, DataMatrix):
        X = DataMatrix.from_array(X)
    est = table[estimator]
    n, d = X.shape
    base = est.fit(X)
    reports = []
    for m in m_values:
        if not 0 <= m <= n:
            raise ConfigError(f"m must lie in [0, n], got {m}")
        disp = []
        changed = np.zeros(d, dtype=int)
        for mag in magnitudes:
            rng = np.random.default_rng(seed)
            Xm, changed = _place(X, int(m), float(mag), placement, rng)
            disp.append(_response(est, base, est.fit(Xm), est.kind))
        broke = False
        if est.kind == "covariance":
            broke = any(v == math.inf for v in disp)
        if est.kind == "subspace":
            broke = any(v >= math.pi / 2 - 1e-4 for v in disp)
        elif len(disp) >= 2:
            a, b = disp[-2], disp[-1]
            broke = broke or b == math.inf or (a > 0 and b / a >= DIVERGENCE_RATIO)
        reports.append(AttackReport(estimator, int(m), list(magnitudes), disp, bool(broke),
                                    est.bound(n, d), placement, changed.tolist()))
    return reports
