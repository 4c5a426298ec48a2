"""Levinson solver for symmetric positive-definite Toeplitz systems.

The GP prior covariance on a uniform bin-midpoint grid is Toeplitz, so
per-particle quadratic forms and log determinants cost O(n^2) here instead
of the O(n^3) of a dense Cholesky.  The batch kernel is numba-compiled and
falls back to dense linear algebra for rows it flags as numerically
unsafe (the caller handles the flag).
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

__all__ = [
    "sample_batch",
    "solve_logdet_batch",
    "toeplitz_sample_batch",
    "toeplitz_solve_batch",
    "toeplitz_whiten_batch",
    "whiten_batch",
]


@njit(cache=True, parallel=True)
def toeplitz_solve_batch(rows: np.ndarray, rhs: np.ndarray):
    """Solve T_i x_i = b_i for a batch of SPD Toeplitz matrices.

    ``rows[i]`` is the first row of T_i (``rows[i, 0] > 0``), ``rhs[i]``
    the right-hand side.  Returns (x, logdet, ok); ``ok[i]`` is False when
    the Levinson recursion lost positive definiteness, in which case
    x[i]/logdet[i] are unusable.
    """
    B, n = rows.shape
    x_out = np.empty((B, n))
    logdet = np.empty(B)
    ok = np.ones(B, np.bool_)
    for b in prange(B):
        r0 = rows[b, 0]
        if not (r0 > 0.0 and np.isfinite(r0)):
            ok[b] = False
            continue
        ld = n * np.log(r0)
        x = x_out[b]
        x[0] = rhs[b, 0] / r0
        if n == 1:
            logdet[b] = ld
            continue
        rho = np.empty(n - 1)
        for j in range(n - 1):
            rho[j] = rows[b, j + 1] / r0
        y = np.empty(n - 1)
        y[0] = -rho[0]
        beta = 1.0
        alpha = -rho[0]
        good = True
        for k in range(1, n):
            beta = (1.0 - alpha * alpha) * beta
            if not (beta > 0.0 and np.isfinite(beta)):
                good = False
                break
            ld += np.log(beta)
            acc = 0.0
            for j in range(k):
                acc += rho[j] * x[k - 1 - j]
            mu = (rhs[b, k] / r0 - acc) / beta
            for j in range(k):
                x[j] += mu * y[k - 1 - j]
            x[k] = mu
            if k < n - 1:
                acc = 0.0
                for j in range(k):
                    acc += rho[j] * y[k - 1 - j]
                alpha = -(rho[k] + acc) / beta
                half = k // 2
                for j in range(half):
                    yj = y[j]
                    yk = y[k - 1 - j]
                    y[j] = yj + alpha * yk
                    y[k - 1 - j] = yk + alpha * yj
                if k % 2 == 1:
                    y[half] = y[half] * (1.0 + alpha)
                y[k] = alpha
        if good:
            logdet[b] = ld
        else:
            ok[b] = False
    return x_out, logdet, ok


@njit(cache=True, parallel=True)
def toeplitz_sample_batch(rows: np.ndarray, z: np.ndarray):
    """Map standard normals to draws with SPD Toeplitz covariance.

    Uses the Levinson-Durbin prediction decomposition: x[k] is drawn from
    its conditional distribution given x[0:k], so the map z -> x is the
    (lower-triangular) Cholesky action of the Toeplitz matrix with first
    row ``rows[i]``.  Returns (x, ok); rows flagged not-ok lost positive
    definiteness and must be handled by the caller.
    """
    B, n = rows.shape
    x_out = np.empty((B, n))
    ok = np.ones(B, np.bool_)
    for b in prange(B):
        r0 = rows[b, 0]
        if not (r0 > 0.0 and np.isfinite(r0)):
            ok[b] = False
            continue
        x = x_out[b]
        x[0] = np.sqrt(r0) * z[b, 0]
        if n == 1:
            continue
        rho = np.empty(n - 1)
        for j in range(n - 1):
            rho[j] = rows[b, j + 1] / r0
        y = np.empty(n - 1)
        y[0] = -rho[0]
        alpha = -rho[0]
        beta = 1.0
        good = True
        for k in range(1, n):
            beta = (1.0 - alpha * alpha) * beta
            if not (beta > 0.0 and np.isfinite(beta)):
                good = False
                break
            mean = 0.0
            for j in range(k):
                mean -= y[j] * x[k - 1 - j]
            x[k] = mean + np.sqrt(r0 * beta) * z[b, k]
            if k < n - 1:
                acc = 0.0
                for j in range(k):
                    acc += rho[j] * y[k - 1 - j]
                alpha = -(rho[k] + acc) / beta
                half = k // 2
                for j in range(half):
                    yj = y[j]
                    yk = y[k - 1 - j]
                    y[j] = yj + alpha * yk
                    y[k - 1 - j] = yk + alpha * yj
                if k % 2 == 1:
                    y[half] = y[half] * (1.0 + alpha)
                y[k] = alpha
        if not good:
            ok[b] = False
    return x_out, ok


@njit(cache=True, parallel=True)
def toeplitz_whiten_batch(rows: np.ndarray, x_in: np.ndarray):
    """Inverse of ``toeplitz_sample_batch``: recover z from x = A z."""
    B, n = rows.shape
    z_out = np.empty((B, n))
    ok = np.ones(B, np.bool_)
    for b in prange(B):
        r0 = rows[b, 0]
        if not (r0 > 0.0 and np.isfinite(r0)):
            ok[b] = False
            continue
        x = x_in[b]
        z = z_out[b]
        z[0] = x[0] / np.sqrt(r0)
        if n == 1:
            continue
        rho = np.empty(n - 1)
        for j in range(n - 1):
            rho[j] = rows[b, j + 1] / r0
        y = np.empty(n - 1)
        y[0] = -rho[0]
        alpha = -rho[0]
        beta = 1.0
        good = True
        for k in range(1, n):
            beta = (1.0 - alpha * alpha) * beta
            if not (beta > 0.0 and np.isfinite(beta)):
                good = False
                break
            mean = 0.0
            for j in range(k):
                mean -= y[j] * x[k - 1 - j]
            z[k] = (x[k] - mean) / np.sqrt(r0 * beta)
            if k < n - 1:
                acc = 0.0
                for j in range(k):
                    acc += rho[j] * y[k - 1 - j]
                alpha = -(rho[k] + acc) / beta
                half = k // 2
                for j in range(half):
                    yj = y[j]
                    yk = y[k - 1 - j]
                    y[j] = yj + alpha * yk
                    y[k - 1 - j] = yk + alpha * yj
                if k % 2 == 1:
                    y[half] = y[half] * (1.0 + alpha)
                y[k] = alpha
        if not good:
            ok[b] = False
    return z_out, ok


def sample_batch(rows: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Batch Toeplitz-covariance sampling with a dense fallback."""
    rows = np.ascontiguousarray(rows, dtype=float)
    z = np.ascontiguousarray(z, dtype=float)
    x, ok = toeplitz_sample_batch(rows, z)
    if not np.all(ok):
        from scipy.linalg import cholesky, toeplitz

        for b in np.nonzero(~ok)[0]:
            chol = cholesky(toeplitz(rows[b]), lower=True)
            x[b] = chol @ z[b]
    return x


def whiten_batch(rows: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Batch whitening (inverse Cholesky action) with a dense fallback."""
    rows = np.ascontiguousarray(rows, dtype=float)
    x = np.ascontiguousarray(x, dtype=float)
    z, ok = toeplitz_whiten_batch(rows, x)
    if not np.all(ok):
        from scipy.linalg import cholesky, solve_triangular, toeplitz

        for b in np.nonzero(~ok)[0]:
            chol = cholesky(toeplitz(rows[b]), lower=True)
            z[b] = solve_triangular(chol, x[b], lower=True)
    return z


def solve_logdet_batch(rows: np.ndarray, rhs: np.ndarray):
    """Batch Toeplitz solve with a dense-Cholesky fallback for flagged rows.

    Returns (x, logdet) with the same shapes as ``toeplitz_solve_batch``.
    """
    rows = np.ascontiguousarray(rows, dtype=float)
    rhs = np.ascontiguousarray(rhs, dtype=float)
    x, logdet, ok = toeplitz_solve_batch(rows, rhs)
    if not np.all(ok):
        from scipy.linalg import cho_factor, cho_solve, toeplitz

        for b in np.nonzero(~ok)[0]:
            mat = toeplitz(rows[b])
            chol = cho_factor(mat, lower=True)
            x[b] = cho_solve(chol, rhs[b])
            logdet[b] = 2.0 * float(np.sum(np.log(np.diag(chol[0]))))
    return x, logdet
