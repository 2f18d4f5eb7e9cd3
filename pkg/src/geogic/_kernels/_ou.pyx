# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled innovations recursions for the exponential-plus-nugget covariance.

Sites must be sorted ascending. Both routines treat the columns of the input
as independent right-hand sides sharing one gain sequence.
"""
from libc.math cimport exp, expm1, log, sqrt

import numpy as np


def whiten(const double[::1] t, double v2, double sigma2, double kappa,
           const double[:, ::1] Y):
    """Return ``(L^{-1} Y, logdet)`` for Sigma = sigma2*exp(-kappa|dt|) + v2*I."""
    cdef Py_ssize_t n = Y.shape[0], k = Y.shape[1], i, j
    out_arr = np.empty((n, k), dtype=np.float64)
    state_arr = np.zeros(k, dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] state = state_arr
    cdef double phi = 0.0, q = 0.0, dt, last_dt = -1.0
    cdef double p_pred = sigma2, p_filt = 0.0, f, gain, rs, innov
    cdef double logdet = 0.0

    for i in range(n):
        if i > 0:
            dt = t[i] - t[i - 1]
            if dt != last_dt:
                # regular spacings reuse the previous transition
                phi = exp(-kappa * dt)
                q = -sigma2 * expm1(-2.0 * kappa * dt)
                last_dt = dt
            p_pred = phi * phi * p_filt + q
        f = p_pred + v2
        if not f > 0.0:
            raise FloatingPointError(f"non-positive innovation variance at site {i}")
        gain = p_pred / f
        rs = 1.0 / sqrt(f)
        logdet += log(f)
        for j in range(k):
            if i > 0:
                state[j] *= phi
            innov = Y[i, j] - state[j]
            out[i, j] = innov * rs
            state[j] += gain * innov
        p_filt = p_pred * v2 / f
    return out_arr, logdet


def color(const double[::1] t, double v2, double sigma2, double kappa,
          const double[:, ::1] U):
    """Return ``L U``, the inverse of :func:`whiten`."""
    cdef Py_ssize_t n = U.shape[0], k = U.shape[1], i, j
    out_arr = np.empty((n, k), dtype=np.float64)
    state_arr = np.zeros(k, dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] state = state_arr
    cdef double phi = 0.0, q = 0.0, dt, last_dt = -1.0
    cdef double p_pred = sigma2, p_filt = 0.0, f, gain, sf, innov

    for i in range(n):
        if i > 0:
            dt = t[i] - t[i - 1]
            if dt != last_dt:
                phi = exp(-kappa * dt)
                q = -sigma2 * expm1(-2.0 * kappa * dt)
                last_dt = dt
            p_pred = phi * phi * p_filt + q
        f = p_pred + v2
        if f < 0.0:
            f = 0.0
        gain = p_pred / f if f > 0.0 else 0.0
        sf = sqrt(f)
        for j in range(k):
            if i > 0:
                state[j] *= phi
            innov = sf * U[i, j]
            out[i, j] = state[j] + innov
            state[j] += gain * innov
        p_filt = p_pred * v2 / f if f > 0.0 else 0.0
    return out_arr
