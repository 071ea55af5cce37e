"""Population-level bounds on the CVaR of individual treatment effects.

All functions take CATE evaluations ``tau`` (one per unit, optionally
weighted) and return the value of a bound on CVaR_alpha(ITE):

* ``upper_bound_cate_cvar``: CVaR of the CATE itself, the tight upper bound.
* ``lower_bound_two_sided_range``: assumes ``|tau(X) - ITE| <= b``.
* ``lower_bound_one_sided_range``: assumes ``tau(X) - ITE <= b``.
* ``lower_bound_variance``: assumes ``Var(ITE | X) <= sigma2(X)``.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import InvalidInput
from .risk_core import as_sample, check_alpha, empirical_cvar

GOLDEN_TOL = 1e-9


def _check_b(b):
    b = float(b)
    if not (b >= 0 and math.isfinite(b)):
        raise InvalidInput(f"b must be finite and nonnegative, got {b!r}")
    return b


def _check_sigma2(sigma2, n):
    if sigma2 is None:
        raise InvalidInput("sigma2 values are required")
    s2 = np.asarray(sigma2, dtype=float).ravel()
    if s2.size == 1 and n > 1:
        s2 = np.full(n, s2[0])
    if s2.shape != (n,):
        raise InvalidInput("sigma2 must align with tau")
    if not np.all(np.isfinite(s2)) or np.any(s2 < 0):
        raise InvalidInput("sigma2 must be finite and nonnegative")
    return s2


def upper_bound_cate_cvar(tau, alpha, weights=None):
    return empirical_cvar(tau, alpha, weights)


def mixture_sample(tau, b, weights=None):
    """Atoms and weights of the equal mixture of ``tau - b`` and ``tau + b``."""
    z, w = as_sample(tau, weights)
    return np.concatenate([z - b, z + b]), np.concatenate([w, w]) / 2.0


def lower_bound_two_sided_range(tau, b, alpha, weights=None):
    """CVaR of the equal mixture of ``tau - b`` and ``tau + b``.

    This is the tight lower bound when residual heterogeneity is confined to
    ``[-b, b]``.
    """
    b = _check_b(b)
    z, w = mixture_sample(tau, b, weights)
    return empirical_cvar(z, alpha, w)


def lower_bound_one_sided_range(tau, b, alpha, weights=None):
    b = _check_b(b)
    return upper_bound_cate_cvar(tau, alpha, weights) - b


def variance_bound_bracket(tau, sigma2, alpha):
    """Search interval guaranteed to contain the maximizer of the variance bound.

    Each summand's derivative has the right sign once ``|tau_i - beta|``
    exceeds ``sigma_i * |1 - 2 alpha| / (2 sqrt(alpha (1 - alpha)))``.
    """
    smax = float(np.sqrt(np.max(sigma2)))
    if alpha < 1.0:
        reach = abs(1.0 - 2.0 * alpha) / (2.0 * math.sqrt(alpha * (1.0 - alpha)))
    else:
        reach = math.inf
    spread = smax * max(1.0, reach) + 1.0
    return float(np.min(tau)) - spread, float(np.max(tau)) + spread


def variance_bound_objective(tau, sigma2, alpha, beta, weights=None):
    """``beta + E[tau - beta - sqrt((tau - beta)^2 + sigma2)] / (2 alpha)``."""
    alpha = check_alpha(alpha)
    z, w = as_sample(tau, weights)
    s2 = _check_sigma2(sigma2, z.size)
    return float(kernels.variance_bound_value(z, w, s2, alpha, float(beta)))


def maximize_variance_bound(tau, sigma2, alpha, weights=None, tol=GOLDEN_TOL):
    """Golden-section maximizer and maximum of the variance-bound objective.

    At ``alpha == 1`` the supremum is the weighted mean of ``tau`` and is
    only approached as ``beta -> inf``; ``(inf, mean)`` is returned.
    """
    alpha = check_alpha(alpha)
    z, w = as_sample(tau, weights)
    s2 = _check_sigma2(sigma2, z.size)
    if alpha == 1.0:
        return math.inf, float(np.dot(z, w))
    lo, hi = variance_bound_bracket(z, s2, alpha)
    beta = float(kernels.golden_variance_bound(z, w, s2, alpha, lo, hi, tol))
    return beta, float(kernels.variance_bound_value(z, w, s2, alpha, beta))


def lower_bound_variance(tau, sigma2, alpha, weights=None):
    """Tight lower bound on ITE-CVaR given ``Var(ITE | X) <= sigma2(X)``."""
    return maximize_variance_bound(tau, sigma2, alpha, weights)[1]


def variance_from_outcomes(var0, var1, rho):
    """Conditional ITE variance implied by arm variances and their correlation.

    Works elementwise on arrays; tiny negative results from cancellation are
    clamped to zero.
    """
    var0 = np.asarray(var0, dtype=float)
    var1 = np.asarray(var1, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if np.any(var0 < 0) or np.any(var1 < 0):
        raise InvalidInput("variances must be nonnegative")
    if np.any(rho < -1) or np.any(rho > 1):
        raise InvalidInput("rho must lie in [-1, 1]")
    out = np.maximum(var0 + var1 - 2.0 * rho * np.sqrt(var0 * var1), 0.0)
    return float(out) if out.ndim == 0 else out


class SlackBounds(NamedTuple):
    """Upper bounds on ``CVaR(tau) - CVaR(ITE)``, loosest last.

    ``outcome_sd`` and ``rmse`` are None when their inputs were not given.
    """

    variance: float
    outcome_sd: float | None
    rmse: float | None


def corollary_slack_bounds(sigma2, alpha, rmse0=None, rmse1=None, var0=None,
                           var1=None, weights=None):
    """Slack bounds from the ITE variance, the arm variances and arm RMSEs.

    Parameters
    ----------
    sigma2 : array_like
        Per-unit ``Var(ITE | X)`` proxy.
    alpha : float
        Level in (0, 1].
    rmse0, rmse1 : float, optional
        Root-mean-squared prediction error of the outcome regression in each
        arm. Both or neither.
    var0, var1 : array_like, optional
        Per-unit conditional outcome variances in each arm. Both or neither.
    """
    alpha = check_alpha(alpha)
    s2 = np.asarray(sigma2, dtype=float).ravel()
    if s2.size == 0:
        raise InvalidInput("sigma2 values are required")
    s2 = _check_sigma2(s2, s2.size)
    if weights is None:
        weights = np.full(s2.size, 1.0 / s2.size)
    _, w = as_sample(s2, weights)
    scale = 1.0 / (2.0 * alpha)
    first = scale * float(np.dot(np.sqrt(s2), w))
    second = None
    if (var0 is None) != (var1 is None):
        raise InvalidInput("var0 and var1 must be given together")
    if var0 is not None:
        v0 = _check_sigma2(var0, s2.size)
        v1 = _check_sigma2(var1, s2.size)
        second = scale * float(np.dot(np.sqrt(v0) + np.sqrt(v1), w))
    third = None
    if (rmse0 is None) != (rmse1 is None):
        raise InvalidInput("rmse0 and rmse1 must be given together")
    if rmse0 is not None:
        if rmse0 < 0 or rmse1 < 0:
            raise InvalidInput("rmse values must be nonnegative")
        third = scale * (float(rmse0) + float(rmse1))
    return SlackBounds(first, second, third)


def interquantile_average(tau, alpha_lo, alpha_hi, weights=None):
    """Average CATE among units whose CATE lies between two quantiles.

    ``(a' CVaR_{a'} - a CVaR_a) / (a' - a)`` with ``0 < a < a' <= 1``.
    """
    alpha_lo = check_alpha(alpha_lo, "alpha_lo")
    alpha_hi = check_alpha(alpha_hi, "alpha_hi")
    if alpha_lo >= alpha_hi:
        raise InvalidInput("alpha_lo must be strictly below alpha_hi")
    hi = alpha_hi * empirical_cvar(tau, alpha_hi, weights)
    lo = alpha_lo * empirical_cvar(tau, alpha_lo, weights)
    return (hi - lo) / (alpha_hi - alpha_lo)


def dte_cvar_binary(mean_y0, mean_y1, alpha):
    """Difference of arm-wise CVaRs for binary outcomes.

    For Bernoulli(p) the lower-tail CVaR is ``(p - 1 + alpha)_+ / alpha``.
    """
    alpha = check_alpha(alpha)
    for p in (mean_y0, mean_y1):
        if not 0.0 <= p <= 1.0:
            raise InvalidInput("binary outcome means must lie in [0, 1]")
    return (max(mean_y1 - 1.0 + alpha, 0.0) - max(mean_y0 - 1.0 + alpha, 0.0)) / alpha
