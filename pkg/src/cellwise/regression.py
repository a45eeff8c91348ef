"""Plug-in cellwise robust regression on top of cellMCD.

The joint matrix [X ; y] is fitted with cellMCD and the slopes and
intercept follow from the partitioned location and covariance. New rows
are screened with the same cell-flagging rule before prediction, and
flagged or missing regressors are replaced by their conditional
expectation given the remaining cells.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cellmcd import CellMcdConfig, CellMcdModel, fit_cellmcd, update_W_row
from .data import DataMatrix
from .errors import DataError


@dataclass
class RegressionModel:
    alpha: float
    beta: np.ndarray
    joint: CellMcdModel
    flag_cutoff: float

    @property
    def p(self) -> int:
        return len(self.beta)

    @property
    def mu_x(self):
        return self.joint.mu[:-1]

    @property
    def sigma_xx(self):
        return self.joint.sigma[:-1, :-1]

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta.tolist(), "joint": self.joint.to_dict()}


@dataclass
class Prediction:
    y_hat: float
    x_imputed: np.ndarray
    cells_flagged: np.ndarray
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {"y_hat": self.y_hat, "x_imputed": self.x_imputed.tolist(),
                "flagged": self.cells_flagged.astype(int).tolist(), "degenerate": self.degenerate}


def coefficients(mu, sigma):
    """Slopes Sigma_xx^-1 Sigma_xy and intercept mu_y - mu_x' beta (response last)."""
    beta = np.linalg.solve(sigma[:-1, :-1], sigma[:-1, -1])
    alpha = float(mu[-1] - mu[:-1] @ beta)
    return alpha, beta


def fit_cellreg(X, y, cfg: CellMcdConfig | None = None) -> RegressionModel:
    cfg = cfg or CellMcdConfig()
    if isinstance(X, DataMatrix):
        names = X.column_names
        X = X.values
    else:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        names = tuple(f"x{j + 1}" for j in range(X.shape[1]))
    y = np.asarray(y, dtype=float).ravel()
    if len(y) != X.shape[0]:
        raise DataError(f"{X.shape[0]} rows of regressors but {len(y)} responses")
    Z = DataMatrix.from_array(np.column_stack([X, y]), column_names=names + ("y",))
    joint = fit_cellmcd(Z, cfg)
    alpha, beta = coefficients(joint.mu, joint.sigma)
    return RegressionModel(alpha, beta, joint, float(np.mean(np.atleast_1d(cfg.q))))


def predict(model: RegressionModel, x_new) -> Prediction:
    """Flag, impute and predict a single row; NaN marks missing regressors."""
    x = np.asarray(x_new, dtype=float).ravel()
    if len(x) != model.p:
        raise DataError(f"expected {model.p} regressors, got {len(x)}")
    obs = np.isfinite(x)
    mu, S = model.mu_x, model.sigma_xx
    pen = model.joint.penalties[:-1]
    w = update_W_row(np.where(obs, x, 0.0), obs, mu, S, pen)
    flagged = obs & ~w
    ximp = np.where(w, x, 0.0)
    miss = ~w
    if miss.any():
        if w.any():
            B = np.linalg.solve(S[np.ix_(w, w)], S[np.ix_(w, miss)])
            ximp[miss] = mu[miss] + (x[w] - mu[w]) @ B
        else:
            ximp[miss] = mu[miss]
    y_hat = float(model.alpha + ximp @ model.beta)
    return Prediction(y_hat, ximp, flagged, degenerate=not w.any())


def predict_many(model: RegressionModel, X_new) -> list[Prediction]:
    X_new = X_new.values if isinstance(X_new, DataMatrix) else np.atleast_2d(np.asarray(X_new, dtype=float))
    return [predict(model, row) for row in X_new]
