"""Inverse and log-determinant of a symmetric positive definite Toeplitz matrix.

Durbin's recursion followed by Trench's algorithm, O(n^2). Used for
uniform one-dimensional grids, where every GP covariance is Toeplitz.
"""
import math

import numpy as np

from ._numba import njit


@njit
def toeplitz_inverse(col):
    """Return ``(ok, log|T|, T^{-1})`` for ``T = toeplitz(col)``.

    ``ok`` is False when a leading minor is not positive.
    """
    n = col.size
    inv = np.zeros((n, n))
    t0 = col[0]
    if not t0 > 0.0:
        return False, -np.inf, inv
    if n == 1:
        inv[0, 0] = 1.0 / t0
        return True, math.log(t0), inv
    r = col[1:] / t0
    m = n - 1
    # Durbin: solve T_m y = -r, tracking the Schur complements for log|T|
    y = np.zeros(m)
    z = np.zeros(m)
    y[0] = -r[0]
    beta = 1.0
    alpha = -r[0]
    logdet = 0.0
    for k in range(1, m):
        beta = (1.0 - alpha * alpha) * beta
        if not beta > 0.0:
            return False, -np.inf, inv
        logdet += math.log(beta)
        acc = r[k]
        for i in range(k):
            acc += r[k - 1 - i] * y[i]
        alpha = -acc / beta
        for i in range(k):
            z[i] = y[i] + alpha * y[k - 1 - i]
        for i in range(k):
            y[i] = z[i]
        y[k] = alpha
    sigma = 1.0
    for i in range(m):
        sigma += r[i] * y[i]
    if not sigma > 0.0:
        return False, -np.inf, inv
    logdet += math.log(sigma) + n * math.log(t0)
    # Trench: border of the inverse, then persymmetric fill of the interior
    gamma = 1.0 / sigma
    v = np.empty(m)
    for i in range(m):
        v[i] = gamma * y[m - 1 - i]
    inv[0, 0] = gamma
    for j in range(1, n):
        inv[0, j] = v[m - j]
    for i in range(1, (n - 1) // 2 + 1):
        for j in range(i, n - i):
            inv[i, j] = inv[i - 1, j - 1] + (
                v[n - 1 - j] * v[n - 1 - i] - v[i - 1] * v[j - 1]
            ) / gamma
    for i in range(n):
        for j in range(i, n - i):
            val = inv[i, j]
            inv[j, i] = val
            inv[n - 1 - i, n - 1 - j] = val
            inv[n - 1 - j, n - 1 - i] = val
    for i in range(n):
        for j in range(n):
            inv[i, j] /= t0
    return True, logdet, inv
