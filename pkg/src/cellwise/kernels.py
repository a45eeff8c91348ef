"""Hyperbolic-tangent rho family, its psi/weight functions and M-scales."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.optimize import brentq

from .errors import ConfigError, ZeroScaleError


def _log_cosh(x):
    # overflow-free ln(cosh x)
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax)) - math.log(2.0)


@dataclass(frozen=True)
class RhoTanhParams:
    b: float = 1.5
    c: float = 4.0
    q1: float = 1.54
    q2: float = 0.86
    a: float = field(init=False)

    def __post_init__(self):
        if not (0 < self.b < self.c) or self.q1 <= 0 or self.q2 <= 0:
            raise ConfigError(f"invalid tanh-rho parameters b={self.b}, c={self.c}, q1={self.q1}, q2={self.q2}")
        a = self.b ** 2 / 2 + (self.q1 / self.q2) * float(_log_cosh(self.q2 * (self.c - self.b)))
        object.__setattr__(self, "a", a)


DEFAULT_RHO = RhoTanhParams()


def rho_tanh(z, p: RhoTanhParams = DEFAULT_RHO):
    """Bounded loss: quadratic up to b, log-cosh transition, constant a beyond c."""
    z = np.abs(np.asarray(z, dtype=float))
    mid = p.a - (p.q1 / p.q2) * _log_cosh(p.q2 * (p.c - np.clip(z, p.b, p.c)))
    out = np.where(z <= p.b, 0.5 * z * z, np.where(z <= p.c, mid, p.a))
    return out if out.ndim else float(out)


def psi_tanh(z, p: RhoTanhParams = DEFAULT_RHO):
    z = np.asarray(z, dtype=float)
    az = np.abs(z)
    mid = p.q1 * np.tanh(p.q2 * (p.c - np.clip(az, p.b, p.c))) * np.sign(z)
    out = np.where(az <= p.b, z, np.where(az < p.c, mid, 0.0))
    return out if out.ndim else float(out)


def weight_tanh(z, p: RhoTanhParams = DEFAULT_RHO):
    """psi(z)/z, with the removable singularity at 0 filled by 1."""
    z = np.asarray(z, dtype=float)
    az = np.abs(z)
    safe = np.where(az > p.b, az, 1.0)
    mid = p.q1 * np.tanh(p.q2 * (p.c - np.clip(az, p.b, p.c))) / safe
    out = np.where(az <= p.b, 1.0, np.where(az < p.c, mid, 0.0))
    return out if out.ndim else float(out)


@lru_cache(maxsize=None)
def gaussian_delta(p: RhoTanhParams = DEFAULT_RHO) -> float:
    """E[rho(Z)] for standard normal Z, 64-point Gauss-Hermite."""
    nodes, weights = hermegauss(64)
    return float(np.sum(weights * rho_tanh(nodes, p)) / math.sqrt(2 * math.pi))


def mscale(residuals, p: RhoTanhParams = DEFAULT_RHO, delta=None, rtol=1e-10) -> float:
    """Scale s with mean(rho(r / s)) = delta.

    delta defaults to the Gaussian expectation of rho, which makes s
    consistent for the standard deviation at the normal model.
    """
    r = np.abs(np.asarray(residuals, dtype=float).ravel())
    if r.size < 2 or not np.all(np.isfinite(r)):
        raise ValueError("mscale needs at least two finite residuals")
    if delta is None:
        delta = gaussian_delta(p)
    if not 0 < delta < p.a:
        raise ConfigError(f"delta must lie in (0, {p.a}), got {delta}")
    nz = r[r > 0]
    if nz.size == 0:
        raise ZeroScaleError("all residuals are zero")
    if p.a * nz.size / r.size <= delta:
        raise ZeroScaleError("too many zero residuals for a positive M-scale")

    def f(log_s):
        return float(np.mean(rho_tanh(r / math.exp(log_s), p))) - delta

    lo = math.log(nz.min() / p.c)
    hi = math.log(r.max() * 10)
    # at lo every nonzero residual sits on the plateau, so f(lo) > 0
    while f(hi) > 0:
        hi += math.log(10)
    log_s = brentq(f, lo, hi, xtol=rtol, rtol=4 * np.finfo(float).eps, maxiter=200)
    return math.exp(log_s)


def case_contamination_probability(eps_cell: float, d: int) -> float:
    """Chance that a row of d independently contaminated cells has at least one outlier."""
    if not 0 <= eps_cell <= 1 or d < 1:
        raise ConfigError("need 0 <= eps_cell <= 1 and d >= 1")
    return 1.0 - (1.0 - eps_cell) ** d
