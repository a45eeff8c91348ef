"""Cellwise outlier detection: marginal robust z-scores and a DDC-style detector.

DDC predicts every standardized cell from the columns it is strongly
correlated with and flags cells whose standardized prediction residual
exceeds the cutoff, so it also catches cells that are only unusual
given the rest of their row.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .data import DataMatrix, column_scales, gauss_rank_corr, qn_scale
from .errors import ConfigError, DegenerateScaleError, InsufficientDataError

DEFAULT_CUTOFF = math.sqrt(chi2.ppf(0.99, 1))


@dataclass
class DetectionResult:
    predictions: np.ndarray
    std_residuals: np.ndarray
    cell_flags: np.ndarray
    imputed: np.ndarray
    row_scores: np.ndarray
    cutoff: float
    method: str = "ddc"
    degenerate_columns: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def flag_rate(self) -> float:
        return float(self.cell_flags.mean())

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "cutoff": self.cutoff,
            "predictions": _jsonable(self.predictions),
            "std_residuals": _jsonable(self.std_residuals),
            "cell_flags": self.cell_flags.astype(int).tolist(),
            "imputed": _jsonable(self.imputed),
            "row_scores": _jsonable(self.row_scores),
            "degenerate_columns": list(self.degenerate_columns),
            "warnings": list(self.warnings),
        }


def _jsonable(a):
    a = np.asarray(a, dtype=float)
    return np.where(np.isfinite(a), a, None).tolist() if a.size else a.tolist()


def _standardize(X: DataMatrix):
    med, sc = column_scales(X, "qn")
    degenerate = [j for j in range(X.d) if not sc[j] > 0]
    z = np.full(X.shape, np.nan)
    for j in range(X.d):
        obs = X.observed[:, j]
        if j in degenerate:
            # zero spread: cells at the median are fine, anything else is infinitely far
            dev = X.values[obs, j] - med[j]
            z[obs, j] = np.where(dev == 0, 0.0, np.copysign(np.inf, dev))
        else:
            z[obs, j] = (X.values[obs, j] - med[j]) / sc[j]
    return z, med, sc, degenerate


def _flag(std_res, observed, cutoff):
    """|r| > cutoff, capped at half of each column's observed cells."""
    a = np.abs(std_res)
    flags = observed & (a > cutoff)
    for j in range(flags.shape[1]):
        cap = int(observed[:, j].sum()) // 2
        idx = np.flatnonzero(flags[:, j])
        if len(idx) > cap:
            # stable sort: ties resolved by row index
            order = idx[np.argsort(-a[idx, j], kind="stable")]
            flags[order[cap:], j] = False
    return flags


def _finish(X, pred, std_res, cutoff, method, degenerate, warnings=()):
    flags = _flag(std_res, X.observed, cutoff)
    imputed = np.where(X.observed & ~flags, X.values, pred)
    n_obs = X.observed.sum(axis=1)
    row_scores = np.divide(flags.sum(axis=1), n_obs, out=np.zeros(X.n), where=n_obs > 0)
    std_res = np.where(X.observed, std_res, np.nan)
    return DetectionResult(pred, std_res, flags, imputed, row_scores, float(cutoff), method,
                           [X.column_names[j] for j in degenerate], list(warnings))


def flag_marginal(X: DataMatrix, cutoff=DEFAULT_CUTOFF, on_degenerate="flag") -> DetectionResult:
    """Flag cells by robust z-score (median / Qn) alone.

    With ``on_degenerate="flag"`` a column with zero Qn keeps its
    median-valued cells and flags the rest (infinite z); ``"raise"``
    turns it into a DegenerateScaleError.
    """
    z, med, sc, degenerate = _standardize(X)
    if degenerate and on_degenerate == "raise":
        raise DegenerateScaleError(X.column_names[degenerate[0]])
    pred = np.broadcast_to(med, X.shape).copy()
    return _finish(X, pred, z, cutoff, "marginal", degenerate)


def _predict_standardized(z, usable, corr, partners):
    n, d = z.shape
    zhat = np.zeros((n, d))
    zu = np.where(usable, z, 0.0)
    for j in range(d):
        num = np.zeros(n)
        den = np.zeros(n)
        for l in partners[j]:
            w = abs(corr[j, l])
            m = usable[:, l]
            num += np.where(m, w * corr[j, l] * zu[:, l], 0.0)
            den += np.where(m, w, 0.0)
        zhat[:, j] = np.divide(num, den, out=np.zeros(n), where=den > 0)
    return zhat


def ddc(X: DataMatrix, min_abs_corr=0.5, max_partners=15, cutoff=DEFAULT_CUTOFF) -> DetectionResult:
    """Detect deviating cells from robust pairwise predictions.

    Parameters
    ----------
    X : DataMatrix
        Needs n >= 10. With d == 1 the marginal filter is returned, with a
        warning recorded on the result.
    min_abs_corr : float
        Columns l with |corr(j, l)| below this never predict column j.
    max_partners : int
        Keep at most this many of the most correlated partners.
    cutoff : float
        Threshold on |standardized residual|; defaults to the 0.99
        quantile of |N(0, 1)|.
    """
    if max_partners < 1:
        raise ConfigError("max_partners must be positive")
    if X.n < 10:
        raise InsufficientDataError("*", f"ddc needs at least 10 rows, got {X.n}")
    if X.d == 1:
        res = flag_marginal(X, cutoff)
        res.method = "ddc"
        res.warnings.append("d == 1: fell back to the marginal filter")
        return res

    z, med, sc, degenerate = _standardize(X)
    clipped = np.clip(z, -cutoff, cutoff)
    good_cols = [j for j in range(X.d) if j not in degenerate]
    corr = np.zeros((X.d, X.d))
    if len(good_cols) > 1:
        sub = gauss_rank_corr(clipped[:, good_cols], X.observed[:, good_cols])
        corr[np.ix_(good_cols, good_cols)] = sub

    partners = []
    for j in range(X.d):
        cand = [l for l in good_cols if l != j and abs(corr[j, l]) >= min_abs_corr]
        cand.sort(key=lambda l: (-abs(corr[j, l]), l))
        partners.append(cand[:max_partners])

    usable = X.observed & (np.abs(np.nan_to_num(z, nan=np.inf)) <= cutoff)
    zhat = _predict_standardized(z, usable, corr, partners)

    std_res = np.full(X.shape, np.nan)
    warnings = []
    for j in range(X.d):
        obs = X.observed[:, j]
        r = z[obs, j] - zhat[obs, j]
        if not partners[j] or j in degenerate:
            std_res[obs, j] = r
            continue
        s = qn_scale(r) if len(r) >= 2 else 0.0
        if s > 0:
            std_res[obs, j] = r / s
        else:
            warnings.append(f"column {X.column_names[j]!r}: zero residual scale")
            std_res[obs, j] = np.where(r == 0, 0.0, np.sign(r) * np.inf)

    pred = med + np.where(np.isfinite(sc), sc, 0.0) * zhat
    return _finish(X, pred, std_res, cutoff, "ddc", degenerate, warnings)
