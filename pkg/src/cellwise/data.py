"""Tabular data container, CSV ingestion and robust per-column summaries."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import norm, rankdata

from .errors import (CsvParseError, CsvStructureError, DataError,
                     DegenerateScaleError, InsufficientDataError)

MAD_FACTOR = 1.4826
QN_FACTOR = 2.2219
DEFAULT_NA_TOKENS = frozenset({"NA", "", "NaN"})

# above this many observations Qn switches from full enumeration to
# bisection-on-value followed by enumeration of the bracketed pairs
_QN_ENUM_LIMIT = 2000


@dataclass(frozen=True, eq=False)
class DataMatrix:
    """n x d table of reals with an observation mask.

    Unobserved cells hold NaN in ``values``; ``observed`` is the
    authoritative mask.
    """

    values: np.ndarray
    observed: np.ndarray
    column_names: tuple

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise DataError(f"expected a non-empty 2-d table, got shape {values.shape}")
        observed = np.array(self.observed, dtype=bool, copy=True).reshape(values.shape)
        if not np.all(np.isfinite(values[observed])):
            raise DataError("observed cells must be finite")
        values[~observed] = np.nan
        names = tuple(str(c) for c in self.column_names)
        if len(names) != values.shape[1]:
            raise DataError(f"{len(names)} column names for {values.shape[1]} columns")
        values.flags.writeable = False
        observed.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "observed", observed)
        object.__setattr__(self, "column_names", names)

    @classmethod
    def from_array(cls, values, observed=None, column_names=None) -> "DataMatrix":
        """Wrap an array; non-finite entries are unobserved unless a mask is given."""
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if observed is None:
            observed = np.isfinite(values)
        if column_names is None:
            column_names = [f"V{j + 1}" for j in range(values.shape[1])]
        return cls(values, observed, tuple(column_names))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    def column(self, j) -> np.ndarray:
        """Observed values of column ``j``."""
        return self.values[self.observed[:, j], j]

    def filled(self, fill=0.0) -> np.ndarray:
        out = self.values.copy()
        out[~self.observed] = fill
        return out

    def with_values(self, values, observed=None) -> "DataMatrix":
        if observed is None:
            observed = np.isfinite(values)
        return DataMatrix(values, observed, self.column_names)


def _parse_rows(rows: Iterable[list], na_tokens, has_header):
    rows = [r for r in rows]
    # trailing blank lines are not data
    while rows and rows[-1] == []:
        rows.pop()
    if not rows:
        raise CsvStructureError(1, "empty input")
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise CsvStructureError(i + 1, f"expected {width} fields, found {len(r)}")

    def numeric(field):
        if field.strip() in na_tokens:
            return True
        try:
            float(field)
        except ValueError:
            return False
        return True

    if has_header is None:
        has_header = not all(numeric(f) for f in rows[0])
    if has_header:
        names = [f.strip() for f in rows[0]]
        body, first_line = rows[1:], 2
    else:
        names = [f"V{j + 1}" for j in range(width)]
        body, first_line = rows, 1
    if not body:
        raise CsvStructureError(first_line, "no data rows")

    values = np.full((len(body), width), np.nan)
    observed = np.zeros((len(body), width), dtype=bool)
    for i, r in enumerate(body):
        for j, field in enumerate(r):
            token = field.strip()
            if token in na_tokens:
                continue
            try:
                v = float(token)
            except ValueError:
                raise CsvParseError(i + first_line, j + 1, field) from None
            if not np.isfinite(v):
                continue
            values[i, j] = v
            observed[i, j] = True
    return DataMatrix(values, observed, tuple(names))


def read_csv(path, na_tokens=DEFAULT_NA_TOKENS, has_header=None) -> DataMatrix:
    """Read a comma-separated numeric table.

    ``has_header=None`` treats the first row as a header when any of its
    fields is neither numeric nor an NA token. Row numbers in errors are
    1-based file lines.
    """
    with open(path, newline="") as fh:
        return _parse_rows(csv.reader(fh), frozenset(na_tokens), has_header)


def parse_csv_text(text: str, na_tokens=DEFAULT_NA_TOKENS, has_header=None) -> DataMatrix:
    return _parse_rows(csv.reader(io.StringIO(text)), frozenset(na_tokens), has_header)


def format_float(v) -> str:
    return repr(float(v))


def to_csv_text(X: DataMatrix, na_token="NA", header=True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(X.column_names)
    for i in range(X.n):
        w.writerow([format_float(X.values[i, j]) if X.observed[i, j] else na_token
                    for j in range(X.d)])
    return buf.getvalue()


def write_csv(X: DataMatrix, path, na_token="NA", header=True):
    Path(path).write_text(to_csv_text(X, na_token, header))


# --- univariate robust summaries -------------------------------------------

def median(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.median(x))


def mad_scale(x) -> float:
    x = np.asarray(x, dtype=float)
    med = np.median(x)
    return float(MAD_FACTOR * np.median(np.abs(x - med)))


def _qn_order_statistic_enum(xs, k):
    m = len(xs)
    i, j = np.triu_indices(m, 1)
    diffs = xs[j] - xs[i]
    return float(np.partition(diffs, k - 1)[k - 1])


def _qn_order_statistic_select(xs, k):
    # xs sorted ascending. count(t) = #pairs i<j with xs[j]-xs[i] <= t
    m = len(xs)
    idx = np.arange(m)

    def count(t):
        return int(np.sum(np.maximum(np.searchsorted(xs, xs + t, side="right") - idx - 1, 0)))

    lo, hi = -1.0, float(xs[-1] - xs[0])
    # invariant: count(lo) < k <= count(hi)
    for _ in range(200):
        between = count(hi) - count(lo)
        if between <= 4 * m:
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            # adjacent floats: every bracketed pair equals hi
            return hi
        if count(mid) >= k:
            hi = mid
        else:
            lo = mid
    start = np.searchsorted(xs, xs + lo, side="right")
    stop = np.searchsorted(xs, xs + hi, side="right")
    start = np.maximum(start, idx + 1)
    cand = np.concatenate([xs[s:e] - xs[i] for i, (s, e) in enumerate(zip(start, stop)) if e > s])
    r = k - count(lo)
    return float(np.partition(cand, r - 1)[r - 1])


def qn_raw(x) -> float:
    """k-th smallest pairwise distance, k = C(h, 2), h = floor(m/2) + 1."""
    xs = np.sort(np.asarray(x, dtype=float))
    m = len(xs)
    if m < 2:
        raise ValueError("Qn needs at least two values")
    h = m // 2 + 1
    k = h * (h - 1) // 2
    if m <= _QN_ENUM_LIMIT:
        return _qn_order_statistic_enum(xs, k)
    return _qn_order_statistic_select(xs, k)


def qn_scale(x) -> float:
    return QN_FACTOR * qn_raw(x)


@dataclass(frozen=True)
class ColumnSummary:
    name: str
    median: float
    mad_scale: float
    qn_scale: float
    n_observed: int

    def to_dict(self):
        return {"name": self.name, "median": self.median, "mad_scale": self.mad_scale,
                "qn_scale": self.qn_scale, "n_observed": self.n_observed}


def column_summaries(X: DataMatrix) -> list[ColumnSummary]:
    out = []
    for j, name in enumerate(X.column_names):
        col = X.column(j)
        if len(col) < 2:
            raise InsufficientDataError(name, f"{len(col)} observed cells, need at least 2")
        out.append(ColumnSummary(name, median(col), mad_scale(col), qn_scale(col), len(col)))
    return out


def summaries_to_json(summaries: Sequence[ColumnSummary]) -> dict:
    return {"columns": [s.to_dict() for s in summaries]}


def column_scales(X: DataMatrix, scale_choice="qn"):
    """Per-column (medians, scales) computed on observed cells."""
    summaries = column_summaries(X)
    med = np.array([s.median for s in summaries])
    if scale_choice == "qn":
        sc = np.array([s.qn_scale for s in summaries])
    elif scale_choice == "mad":
        sc = np.array([s.mad_scale for s in summaries])
    else:
        raise ValueError(f"unknown scale {scale_choice!r}")
    return med, sc


def robust_zscores(X: DataMatrix, scale_choice="mad") -> np.ndarray:
    """(x - median) / scale per column; unobserved cells are NaN."""
    med, sc = column_scales(X, scale_choice)
    for j, s in enumerate(sc):
        if not s > 0:
            raise DegenerateScaleError(X.column_names[j])
    z = (X.values - med) / sc
    z[~X.observed] = np.nan
    return z


# --- rank correlations --------------------------------------------------------

def _normal_scores(x):
    r = rankdata(x)
    return norm.ppf(r / (len(x) + 1.0))


def _pearson(a, b):
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt(np.dot(a, a) * np.dot(b, b))
    if den == 0:
        return 0.0
    return float(np.clip(np.dot(a, b) / den, -1.0, 1.0))


def _pairwise_rank_corr(values, observed, transform):
    n, d = values.shape
    R = np.eye(d)
    complete = observed.all(axis=1)
    if complete.all():
        S = np.column_stack([transform(values[:, j]) for j in range(d)])
        S = S - S.mean(axis=0)
        norms = np.sqrt(np.sum(S * S, axis=0))
        with np.errstate(invalid="ignore", divide="ignore"):
            C = (S.T @ S) / np.outer(norms, norms)
        C[~np.isfinite(C)] = 0.0
        C = np.clip(C, -1.0, 1.0)
        np.fill_diagonal(C, 1.0)
        return C
    for j in range(d):
        for l in range(j + 1, d):
            both = observed[:, j] & observed[:, l]
            if both.sum() < 3:
                raise InsufficientDataError(f"{j},{l}", "fewer than 3 jointly observed rows")
            R[j, l] = R[l, j] = _pearson(transform(values[both, j]), transform(values[both, l]))
    return R


def gauss_rank_corr(values, observed=None) -> np.ndarray:
    """Gaussian rank correlation matrix on pairwise-complete rows."""
    values = np.asarray(values, dtype=float)
    if observed is None:
        observed = np.isfinite(values)
    return _pairwise_rank_corr(values, observed, _normal_scores)


def spearman_corr(values, observed=None) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if observed is None:
        observed = np.isfinite(values)
    return _pairwise_rank_corr(values, observed, rankdata)
