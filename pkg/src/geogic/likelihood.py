"""GLS estimation, the projections ``M``/``A`` and the profile log-likelihood.

All selection-path quantities are computed from whitened data
``Zw = L^{-1} Z`` and ``Xw = L^{-1} X``; ``Sigma^{-1}`` is never formed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np
import scipy.linalg as sla

from .covariance import CovMatrix, CovParams, covariance_for, factor_and_whiten
from .datagen import Dataset

LOG_2PI = math.log(2.0 * math.pi)
DENSE_LIMIT = 2000


class SingularDesignError(np.linalg.LinAlgError):
    """``X(alpha)' Sigma^{-1} X(alpha)`` is (numerically) singular."""

    def __init__(self, msg, dependent=()):
        super().__init__(msg)
        self.dependent = tuple(dependent)


@dataclass(frozen=True, order=True)
class ModelAlpha:
    """A candidate model: the sorted regressor indices beyond the intercept."""

    indices: tuple[int, ...] = ()

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if any(i < 1 for i in idx):
            raise ValueError(f"regressor indices start at 1: {idx}")
        if len(set(idx)) != len(idx):
            raise ValueError(f"duplicate indices in {idx}")
        object.__setattr__(self, "indices", tuple(sorted(idx)))

    @property
    def size(self) -> int:
        """``p(alpha)``: number of regressors, intercept excluded."""
        return len(self.indices)

    @property
    def columns(self) -> list[int]:
        """Column positions in the full design, intercept (0) first."""
        return [0, *self.indices]

    def sort_key(self):
        return (self.size, self.indices)

    @property
    def label(self) -> str:
        return "∅" if not self.indices else "{" + ",".join(map(str, self.indices)) + "}"

    def __str__(self):
        return self.label

    @classmethod
    def parse(cls, text: str) -> "ModelAlpha":
        t = text.strip().strip("{}")
        if t in ("", "∅", "empty"):
            return cls(())
        return cls(tuple(int(x) for x in t.split(",")))


def model(*indices: int) -> ModelAlpha:
    return ModelAlpha(tuple(indices))


@dataclass(frozen=True, eq=False)
class GlsFit:
    beta_hat: np.ndarray
    loglik: float
    residual: np.ndarray
    quad: float
    logdet: float


@dataclass(frozen=True, eq=False)
class Whitened:
    """Data whitened once at one ``theta``; shared by every candidate model."""

    Zw: np.ndarray
    Xw: np.ndarray
    logdet: float
    n: int
    cov: CovMatrix


def whiten_data(theta: CovParams, data: Dataset, cov: CovMatrix | None = None) -> Whitened:
    if cov is None and data.sites.dim == 1:
        cov, W = factor_and_whiten(theta, data.sites, data.stacked_sorted(), presorted=True)
    elif cov is None:
        cov, W = factor_and_whiten(theta, data.sites, data.stacked())
    else:
        W = cov.whiten(data.stacked())
    return Whitened(W[:, 0], W[:, 1:], cov.logdet, data.n, cov)


def _check_columns(alpha: ModelAlpha, p: int):
    if alpha.indices and alpha.indices[-1] > p:
        raise ValueError(f"model {alpha} refers to a regressor beyond p = {p}")


def _dependent_columns(Xw: np.ndarray, cols: list[int]) -> list[int]:
    """Columns lying (numerically) in the span of the preceding ones."""
    dep, kept = [], []
    for pos, c in enumerate(cols):
        v = Xw[:, pos]
        if kept:
            B = Xw[:, kept]
            coef, *_ = np.linalg.lstsq(B, v, rcond=None)
            r = v - B @ coef
        else:
            r = v
        if np.linalg.norm(r) <= 1e-8 * max(np.linalg.norm(v), 1e-300):
            dep.append(c)
        else:
            kept.append(pos)
    return dep


def _gram_solve(Xa: np.ndarray, Zw: np.ndarray, cols: list[int]):
    G = Xa.T @ Xa
    try:
        C = np.linalg.cholesky(G)
        ok = np.diag(C).min() > 1e-10 * math.sqrt(max(np.diag(G).max(), 1e-300))
    except np.linalg.LinAlgError:
        ok = False
    if not ok:
        dep = _dependent_columns(Xa, cols)
        raise SingularDesignError(
            f"X(alpha)' Sigma^-1 X(alpha) is singular; dependent columns {dep}", dep)
    return sla.cho_solve((C, True), Xa.T @ Zw, check_finite=False)


def loglik_from_whitened(alpha: ModelAlpha, w: Whitened) -> GlsFit:
    Xa = w.Xw[:, alpha.columns]
    beta = _gram_solve(Xa, w.Zw, alpha.columns)
    rw = w.Zw - Xa @ beta
    quad = float(rw @ rw)
    ll = -0.5 * w.n * LOG_2PI - 0.5 * w.logdet - 0.5 * quad
    return GlsFit(beta, ll, rw, quad, w.logdet)


def gls_beta(alpha: ModelAlpha, theta: CovParams, data: Dataset,
             cov: CovMatrix | None = None) -> GlsFit:
    """GLS fit of model ``alpha`` at fixed ``theta``.

    ``residual`` is ``Z - X(alpha) beta_hat`` in the original site order.
    """
    _check_columns(alpha, data.p)
    w = whiten_data(theta, data, cov)
    fit = loglik_from_whitened(alpha, w)
    resid = data.Z - data.X[:, alpha.columns] @ fit.beta_hat
    return GlsFit(fit.beta_hat, fit.loglik, resid, fit.quad, fit.logdet)


def profile_loglik(alpha: ModelAlpha, theta: CovParams, data: Dataset,
                   cov: CovMatrix | None = None) -> float:
    """``-n/2 log 2pi - 1/2 logdet Sigma - 1/2 r' Sigma^{-1} r`` with the GLS residual ``r``."""
    _check_columns(alpha, data.p)
    return loglik_from_whitened(alpha, whiten_data(theta, data, cov)).loglik


def profile_logliks(alphas: Iterable[ModelAlpha], theta: CovParams,
                    data: Dataset) -> dict[ModelAlpha, float]:
    """Profile log-likelihoods of several models sharing one factorization.

    Models with a singular design map to ``nan``.
    """
    w = whiten_data(theta, data)
    out = {}
    for a in alphas:
        try:
            out[a] = loglik_from_whitened(a, w).loglik
        except SingularDesignError:
            out[a] = math.nan
    return out


def projection_matrix(alpha: ModelAlpha, theta: CovParams, data: Dataset,
                      complement: bool = False) -> np.ndarray:
    """Dense ``M = X (X' S^-1 X)^-1 X' S^-1`` (or ``A = I - M``), ``n <= 2000``."""
    if data.n > DENSE_LIMIT:
        raise ValueError(f"dense projections are limited to n <= {DENSE_LIMIT}")
    _check_columns(alpha, data.p)
    cov = covariance_for(theta, data.sites)
    Xa = data.X[:, alpha.columns]
    SiX = cov.solve(Xa)
    G = Xa.T @ SiX
    try:
        C = np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        dep = _dependent_columns(cov.whiten(Xa), alpha.columns)
        raise SingularDesignError(f"singular design; dependent columns {dep}", dep) from None
    M = Xa @ sla.cho_solve((C, True), SiX.T)
    return np.eye(data.n) - M if complement else M
