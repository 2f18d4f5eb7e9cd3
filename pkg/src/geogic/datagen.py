"""Simulate responses ``Z = X beta0 (+ zeta) + eta + eps`` from the true model."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import seeding
from .covariance import CovMatrix, CovParams, covariance_for
from .design import RegressorSpec, SiteSet, regressor_column


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class TruthSpec:
    """The data-generating model.

    ``beta0`` includes the intercept, so ``len(beta0) == p + 1``. ``zeta`` is an
    optional unobserved mean term drawn like a regressor but never placed in
    ``X``. ``sigma0`` optionally overrides the covariance with an arbitrary
    dense matrix (a truth outside the fitted family); ``theta0`` then only
    serves as metadata.
    """

    beta0: tuple[float, ...]
    theta0: CovParams
    zeta: RegressorSpec | None = None
    zeta_scale: float = 1.0
    sigma0: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "beta0", tuple(float(b) for b in self.beta0))

    @property
    def p(self) -> int:
        return len(self.beta0) - 1

    @property
    def true_model(self) -> tuple[int, ...]:
        """Indices with nonzero coefficient: the smallest correct model when ``zeta`` is absent."""
        return tuple(j for j in range(1, len(self.beta0)) if self.beta0[j] != 0)

    def covariance(self, sites: SiteSet) -> CovMatrix:
        if self.sigma0 is not None:
            from .covariance import from_dense
            return from_dense(self.sigma0)
        return covariance_for(self.theta0, sites)

    def eta_covariance(self, sites: SiteSet) -> CovMatrix:
        th = self.theta0
        return covariance_for(CovParams(0.0, th.sigma2, th.kappa), sites)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Response ``Z``, design ``X`` (intercept first) and sites.

    Simulated datasets also carry the realized truth: ``mu0`` and
    ``noise = eta + eps``. Both are ``None`` for observed data.
    """

    Z: np.ndarray
    X: np.ndarray
    sites: SiteSet
    mu0: np.ndarray | None = None
    noise: np.ndarray | None = None

    def __post_init__(self):
        Z = np.array(self.Z, dtype=float).reshape(-1)
        X = np.array(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        n = len(Z)
        if X.shape[0] != n or self.sites.n != n:
            raise DataError(
                f"inconsistent sizes: Z {n}, X {X.shape[0]}, sites {self.sites.n}")
        if not (np.isfinite(Z).all() and np.isfinite(X).all()):
            raise DataError("non-finite entries in Z or X")
        for a in (Z, X):
            a.setflags(write=False)
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "_stacked", None)
        object.__setattr__(self, "_stacked_sorted", None)

    def stacked(self) -> np.ndarray:
        """``[Z, X]`` as one read-only array, built once."""
        if self._stacked is None:
            ZX = np.column_stack([self.Z, self.X])
            ZX.setflags(write=False)
            object.__setattr__(self, "_stacked", ZX)
        return self._stacked

    def stacked_sorted(self) -> np.ndarray:
        """``[Z, X]`` with rows in sorted-site order (1D only), built once."""
        if self._stacked_sorted is None:
            ZX = np.ascontiguousarray(self.stacked()[self.sites.sorted_1d()[0]])
            ZX.setflags(write=False)
            object.__setattr__(self, "_stacked_sorted", ZX)
        return self._stacked_sorted

    @property
    def n(self) -> int:
        return len(self.Z)

    @property
    def p(self) -> int:
        return self.X.shape[1] - 1

    def take(self, index) -> "Dataset":
        """Rows permuted/subset by ``index``, truth components included."""
        idx = np.asarray(index)
        pick = (lambda a: None if a is None else a[idx])
        return Dataset(self.Z[idx], self.X[idx], self.sites.take(idx),
                       pick(self.mu0), pick(self.noise))


def true_mean(truth: TruthSpec, X: np.ndarray, sites: SiteSet, seed=0) -> np.ndarray:
    """``X beta0`` plus the unobserved ``zeta`` term if the truth has one."""
    X = np.asarray(X, dtype=float)
    if X.shape[1] != len(truth.beta0):
        raise DataError(f"X has {X.shape[1]} columns but beta0 has {len(truth.beta0)}")
    mu = X @ np.asarray(truth.beta0)
    if truth.zeta is not None:
        key = tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)
        rng = seeding.generator(*key, seeding.ZETA) if truth.zeta.stochastic else None
        mu = mu + truth.zeta_scale * regressor_column(truth.zeta, sites, rng)
    return mu


def simulate_dataset(truth: TruthSpec, X: np.ndarray, sites: SiteSet, seed=0, *,
                     zero_eta: bool = False, zero_eps: bool = False,
                     eta_cov: CovMatrix | None = None) -> Dataset:
    """Draw ``Z = mu0 + L u + sqrt(v0^2) w`` with ``L L' = Sigma_eta(theta0)``.

    ``seed`` is an int or tuple; ``eta`` and ``eps`` use the streams
    ``(*seed, ETA)`` and ``(*seed, EPS)``. ``zero_eta``/``zero_eps`` are test
    hooks that drop one noise component. With a dense ``truth.sigma0`` the
    whole noise is drawn from it and ``eps`` is not separate.
    """
    key = tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)
    n = sites.n
    mu0 = true_mean(truth, X, sites, key)
    if truth.sigma0 is not None:
        u = seeding.generator(*key, seeding.ETA).standard_normal(n)
        noise = np.zeros(n) if zero_eta else truth.covariance(sites).color(u)
    else:
        eta = np.zeros(n)
        if not zero_eta:
            cov = eta_cov if eta_cov is not None else truth.eta_covariance(sites)
            eta = cov.color(seeding.generator(*key, seeding.ETA).standard_normal(n))
        eps = np.zeros(n)
        if not zero_eps and truth.theta0.v2 > 0:
            w = seeding.generator(*key, seeding.EPS).standard_normal(n)
            eps = math.sqrt(truth.theta0.v2) * w
        noise = eta + eps
    return Dataset(mu0 + noise, X, sites, mu0=mu0, noise=noise)


def simulate_many(truth: TruthSpec, X: np.ndarray, sites: SiteSet,
                  seeds: Sequence) -> list[Dataset]:
    """Replicates sharing one factorization of ``Sigma_eta(theta0)``."""
    cov = None if truth.sigma0 is not None else truth.eta_covariance(sites)
    return [simulate_dataset(truth, X, sites, s, eta_cov=cov) for s in seeds]
