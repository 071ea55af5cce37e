"""Distribution-free CVaR and quantile primitives on finite weighted samples.

CVaR here is always the lower tail::

    CVaR_alpha(Z) = sup_beta  beta + E[(Z - beta)_-] / alpha

which is attained at the left-continuous alpha-quantile of Z. Right-tail
conventions are obtained by negating the input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import kernels
from .errors import InvalidInput

WEIGHT_SUM_TOL = 1e-12


def check_alpha(alpha, name="alpha"):
    alpha = float(alpha)
    if not (0.0 < alpha <= 1.0):
        raise InvalidInput(f"{name} must lie in (0, 1], got {alpha!r}")
    return alpha


def as_sample(values, weights=None):
    """Validate a (values, weights) pair and return float arrays.

    Uniform weights are filled in when ``weights`` is None.
    """
    z = np.asarray(values, dtype=float).ravel()
    if z.size == 0:
        raise InvalidInput("sample is empty")
    if not np.all(np.isfinite(z)):
        raise InvalidInput("sample contains non-finite values")
    if weights is None:
        w = np.full(z.size, 1.0 / z.size)
    else:
        w = np.asarray(weights, dtype=float).ravel()
        if w.shape != z.shape:
            raise InvalidInput("weights and values differ in length")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InvalidInput("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL * max(1, z.size):
            raise InvalidInput(f"weights must sum to 1, got {w.sum()!r}")
    return z, w


def _sorted(values, weights):
    z, w = as_sample(values, weights)
    order = np.argsort(z, kind="stable")
    return np.ascontiguousarray(z[order]), np.ascontiguousarray(w[order])


def empirical_quantile(values, alpha, weights=None):
    """Smallest sample value ``b`` with weighted CDF ``F(b) >= alpha``.

    Parameters
    ----------
    values : array_like
        Sample atoms.
    alpha : float
        Level in (0, 1].
    weights : array_like, optional
        Nonnegative weights summing to one; uniform when omitted.

    Returns
    -------
    float
        An element of ``values``.
    """
    alpha = check_alpha(alpha)
    z, w = _sorted(values, weights)
    beta, _ = kernels.sorted_cvar(z, w, alpha)
    return float(beta)


def empirical_cvar(values, alpha, weights=None):
    """Lower-tail CVaR at level ``alpha`` of a weighted sample.

    Evaluates ``beta + E[(Z - beta)_-] / alpha`` at the empirical
    alpha-quantile, which is the value of the supremum over ``beta``.
    """
    alpha = check_alpha(alpha)
    z, w = _sorted(values, weights)
    _, value = kernels.sorted_cvar(z, w, alpha)
    return float(value)


def quantile_and_cvar(values, alpha, weights=None):
    alpha = check_alpha(alpha)
    z, w = _sorted(values, weights)
    beta, value = kernels.sorted_cvar(z, w, alpha)
    return float(beta), float(value)


def normal_cvar(mu, sigma, alpha):
    """Lower-tail CVaR of N(mu, sigma^2): ``mu - sigma * pdf(q_alpha) / alpha``."""
    alpha = check_alpha(alpha)
    if sigma < 0:
        raise InvalidInput("sigma must be nonnegative")
    if alpha == 1.0:
        return float(mu)
    q = stats.norm.ppf(alpha)
    return float(mu - sigma * stats.norm.pdf(q) / alpha)


@dataclass(frozen=True)
class RiskCurve:
    """Values of a risk functional on a strictly increasing alpha grid."""

    alphas: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        alphas = np.asarray(self.alphas, dtype=float).ravel()
        values = np.asarray(self.values, dtype=float).ravel()
        if alphas.shape != values.shape:
            raise InvalidInput("alphas and values must have equal length")
        if alphas.size and (np.any(alphas <= 0) or np.any(alphas > 1)):
            raise InvalidInput("alphas must lie in (0, 1]")
        if np.any(np.diff(alphas) <= 0):
            raise InvalidInput("alpha grid must be strictly increasing")
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "values", values)

    def is_monotone(self):
        return bool(np.all(np.diff(self.values) >= 0))


def rearrange_monotone(curve):
    """Sort the curve's values ascending on the same alpha grid.

    The true alpha -> CVaR map is nondecreasing, so sorting point estimates
    can only reduce their error; it is idempotent and keeps the multiset.
    """
    return RiskCurve(curve.alphas.copy(), np.sort(curve.values, kind="stable"))
