"""Brute-force references shared by the unit and acceptance tests."""

import math

import numpy as np
from scipy.stats import ncx2

from geogic.covariance import CovParams

from conftest import dense_exp_cov


def dense_profile_loglik(theta, data, columns):
    S = dense_exp_cov(theta, data.sites.coords)
    L = np.linalg.cholesky(S)
    Xw = np.linalg.solve(L, data.X[:, columns])
    zw = np.linalg.solve(L, data.Z)
    beta, *_ = np.linalg.lstsq(Xw, zw, rcond=None)
    r = zw - Xw @ beta
    return -0.5 * (data.n * math.log(2 * math.pi) + 2 * np.log(np.diag(L)).sum() + r @ r)


def grid_search(data, columns, lo, hi, points=21):
    axes = [np.linspace(a, b, points) for a, b in zip(lo, hi)]
    best = (-math.inf, None)
    for v in axes[0]:
        for s in axes[1]:
            for k in axes[2]:
                theta = CovParams(v, s, k)
                ll = dense_profile_loglik(theta, data, columns)
                if ll > best[0]:
                    best = (ll, theta)
    return best


def exact_bic_pick_probability(x, theta, sites):
    """P(BIC picks {1} over the intercept-only model) with known covariance.

    The log-likelihood ratio is half a noncentral chi-square with one degree
    of freedom, so the probability is exact rather than simulated.
    """
    S = dense_exp_cov(theta, sites.coords)
    one = np.ones(len(x))
    Si_x = np.linalg.solve(S, x)
    Si_1 = np.linalg.solve(S, one)
    lam = x @ Si_x - (one @ Si_x) ** 2 / (one @ Si_1)
    return float(ncx2.sf(math.log(len(x)), 1, lam))
