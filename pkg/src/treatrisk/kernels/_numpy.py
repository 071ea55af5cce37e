"""Pure-numpy reference kernels.

Every function here has a twin in ``_numba`` with the same signature and
results that agree to floating-point rounding.
"""

import math

import numpy as np

# Slack on the cumulative-weight comparison so that e.g. 0.1 + 0.1 >= 0.2
# holds regardless of summation rounding.
CDF_TOL = 1e-12
INVPHI = (math.sqrt(5.0) - 1.0) / 2.0
# grid points per block; blocks hold at most about _BLOCK_CELLS floats
_BLOCK_CELLS = 2_000_000


def sorted_cvar(z, w, alpha):
    """Lower-tail quantile and CVaR of an ascending, weighted sample.

    Returns ``(beta, cvar)`` where ``beta`` is the smallest atom whose
    cumulative weight reaches ``alpha``.
    """
    cw = np.cumsum(w)
    k = int(np.searchsorted(cw, alpha - CDF_TOL, side="left"))
    k = min(k, z.shape[0] - 1)
    beta = z[k]
    tail = np.dot(z[:k] - beta, w[:k])
    return beta, beta + tail / alpha


def _chunk(n):
    return max(1, _BLOCK_CELLS // max(n, 1))


def grid_cvar_max(z, w, alpha, grid):
    best = -np.inf
    step = _chunk(z.shape[0])
    for start in range(0, grid.shape[0], step):
        g = grid[start:start + step]
        vals = g + np.minimum(z[None, :] - g[:, None], 0.0) @ w / alpha
        best = max(best, float(vals.max()))
    return best


def _neg_part_hyp(u, s2):
    # u - sqrt(u^2 + s2), written without cancellation for large positive u
    root = np.sqrt(u * u + s2)
    out = u - root
    pos = u > 0
    out[pos] = -s2[pos] / (u[pos] + root[pos])
    return out


def variance_bound_value(tau, w, s2, alpha, beta):
    u = tau - beta
    return beta + np.dot(_neg_part_hyp(u, s2), w) / (2.0 * alpha)


def golden_variance_bound(tau, w, s2, alpha, lo, hi, tol):
    a, b = lo, hi
    c = b - INVPHI * (b - a)
    d = a + INVPHI * (b - a)
    fc = variance_bound_value(tau, w, s2, alpha, c)
    fd = variance_bound_value(tau, w, s2, alpha, d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - INVPHI * (b - a)
            fc = variance_bound_value(tau, w, s2, alpha, c)
        else:
            a, c, fc = c, d, fd
            d = a + INVPHI * (b - a)
            fd = variance_bound_value(tau, w, s2, alpha, d)
    return 0.5 * (a + b)


def grid_variance_bound_max(tau, w, s2, alpha, grid):
    best_val = -np.inf
    best_beta = grid[0]
    step = _chunk(tau.shape[0])
    for start in range(0, grid.shape[0], step):
        g = grid[start:start + step]
        u = tau[None, :] - g[:, None]
        root = np.sqrt(u * u + s2[None, :])
        h = np.where(u > 0, -s2[None, :] / np.where(u > 0, u + root, 1.0), u - root)
        vals = g + h @ w / (2.0 * alpha)
        j = int(np.argmax(vals))
        if vals[j] > best_val:
            best_val = float(vals[j])
            best_beta = float(g[j])
    return best_beta, best_val
