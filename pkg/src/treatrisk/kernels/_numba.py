"""numba-compiled kernels; see ``_numpy`` for the reference semantics."""

import math

import numpy as np
from numba import njit

from ._numpy import CDF_TOL, INVPHI


@njit(cache=True)
def sorted_cvar(z, w, alpha):
    n = z.shape[0]
    cw = 0.0
    k = n - 1
    for i in range(n):
        cw += w[i]
        if cw >= alpha - CDF_TOL:
            k = i
            break
    beta = z[k]
    tail = 0.0
    for i in range(k):
        tail += (z[i] - beta) * w[i]
    return beta, beta + tail / alpha


@njit(cache=True)
def grid_cvar_max(z, w, alpha, grid):
    best = -np.inf
    n = z.shape[0]
    for j in range(grid.shape[0]):
        g = grid[j]
        acc = 0.0
        for i in range(n):
            d = z[i] - g
            if d < 0.0:
                acc += d * w[i]
        val = g + acc / alpha
        if val > best:
            best = val
    return best


@njit(cache=True)
def variance_bound_value(tau, w, s2, alpha, beta):
    acc = 0.0
    for i in range(tau.shape[0]):
        u = tau[i] - beta
        root = math.sqrt(u * u + s2[i])
        if u > 0.0:
            h = -s2[i] / (u + root)
        else:
            h = u - root
        acc += h * w[i]
    return beta + acc / (2.0 * alpha)


@njit(cache=True)
def golden_variance_bound(tau, w, s2, alpha, lo, hi, tol):
    a = lo
    b = hi
    c = b - INVPHI * (b - a)
    d = a + INVPHI * (b - a)
    fc = variance_bound_value(tau, w, s2, alpha, c)
    fd = variance_bound_value(tau, w, s2, alpha, d)
    while b - a > tol:
        if fc >= fd:
            b = d
            d = c
            fd = fc
            c = b - INVPHI * (b - a)
            fc = variance_bound_value(tau, w, s2, alpha, c)
        else:
            a = c
            c = d
            fc = fd
            d = a + INVPHI * (b - a)
            fd = variance_bound_value(tau, w, s2, alpha, d)
    return 0.5 * (a + b)


@njit(cache=True)
def grid_variance_bound_max(tau, w, s2, alpha, grid):
    best_val = -np.inf
    best_beta = grid[0]
    for j in range(grid.shape[0]):
        val = variance_bound_value(tau, w, s2, alpha, grid[j])
        if val > best_val:
            best_val = val
            best_beta = grid[j]
    return best_beta, best_val
