"""Pure-Python innovations recursions (fallback for the compiled ``_ou``)."""

import math

import numpy as np


def whiten(t, v2, sigma2, kappa, Y):
    """Return ``(L^{-1} Y, logdet)`` for Sigma = sigma2*exp(-kappa|dt|) + v2*I.

    ``t`` must be sorted ascending; rows of ``Y`` follow ``t``.
    """
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    n, k = Y.shape
    out = np.empty((n, k))
    state = np.zeros(k)
    phi, q, last_dt = 0.0, 0.0, -1.0
    p_pred, p_filt = sigma2, 0.0
    logdet = 0.0
    for i in range(n):
        if i > 0:
            dt = t[i] - t[i - 1]
            if dt != last_dt:
                phi = math.exp(-kappa * dt)
                q = -sigma2 * math.expm1(-2.0 * kappa * dt)
                last_dt = dt
            p_pred = phi * phi * p_filt + q
            state *= phi
        f = p_pred + v2
        if not f > 0.0:
            raise FloatingPointError(f"non-positive innovation variance at site {i}")
        innov = Y[i] - state
        out[i] = innov / math.sqrt(f)
        state += (p_pred / f) * innov
        logdet += math.log(f)
        p_filt = p_pred * v2 / f
    return out, logdet


def color(t, v2, sigma2, kappa, U):
    """Return ``L U``, the inverse of :func:`whiten`."""
    U = np.ascontiguousarray(U, dtype=np.float64)
    n, k = U.shape
    out = np.empty((n, k))
    state = np.zeros(k)
    phi, q, last_dt = 0.0, 0.0, -1.0
    p_pred, p_filt = sigma2, 0.0
    for i in range(n):
        if i > 0:
            dt = t[i] - t[i - 1]
            if dt != last_dt:
                phi = math.exp(-kappa * dt)
                q = -sigma2 * math.expm1(-2.0 * kappa * dt)
                last_dt = dt
            p_pred = phi * phi * p_filt + q
            state *= phi
        f = max(p_pred + v2, 0.0)
        innov = math.sqrt(f) * U[i]
        out[i] = state + innov
        if f > 0.0:
            state += (p_pred / f) * innov
            p_filt = p_pred * v2 / f
        else:
            p_filt = 0.0
    return out
