"""Sampling sites and candidate regressors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import seeding


class DesignError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SiteSet:
    """Ordered sampling locations.

    ``coords`` has shape ``(n,)`` in 1D and ``(n, 2)`` in 2D. ``delta`` is the
    domain-growth exponent the sites were generated with (``None`` for
    imported sites); ``m`` is the lattice side for generated 2D sites.
    """

    coords: np.ndarray
    dim: int
    delta: float | None = None
    m: int | None = None
    _axis: np.ndarray | None = field(default=None, repr=False)
    _sort: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        c = np.array(self.coords, dtype=float)
        if self.dim == 1:
            c = c.reshape(-1)
        elif self.dim == 2:
            c = c.reshape(-1, 2)
        else:
            raise DesignError("dim must be 1 or 2")
        if len(c) == 0:
            raise DesignError("empty site set")
        if not np.isfinite(c).all():
            raise DesignError("non-finite site coordinates")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)
        if self.dim == 2 and self._axis is None:
            object.__setattr__(self, "_axis", _detect_lattice(c))
        if self.dim == 1:
            order = np.argsort(c, kind="stable")
            t = np.ascontiguousarray(c[order])
            t.setflags(write=False)
            object.__setattr__(self, "_sort", (order, t))

    @property
    def n(self) -> int:
        return len(self.coords)

    def sorted_1d(self) -> tuple[np.ndarray, np.ndarray]:
        """``(order, coords[order])`` for 1D sites."""
        if self._sort is None:
            raise DesignError("sorted order is only defined for 1D sites")
        return self._sort

    def lattice_axis(self) -> np.ndarray | None:
        """Axis coordinates if the sites form a square lattice in ``i + (j-1)m`` order."""
        return self._axis

    def take(self, index) -> "SiteSet":
        """Sites reordered/subset by ``index`` (imported-style, no lattice claim kept)."""
        return SiteSet(self.coords[np.asarray(index)], self.dim, self.delta)


def _detect_lattice(c: np.ndarray) -> np.ndarray | None:
    n = len(c)
    m = math.isqrt(n)
    if m * m != n:
        return None
    axis = c[:m, 0]
    if m > 1 and not np.all(np.diff(axis) > 0):
        return None
    ii, jj = np.meshgrid(np.arange(m), np.arange(m))  # jj slow, ii fast
    expected = np.column_stack([axis[ii.ravel()], axis[jj.ravel()]])
    return axis.copy() if np.array_equal(expected, c) else None


def _check_delta(delta: float) -> float:
    delta = float(delta)
    if not 0.0 <= delta < 1.0:
        raise DesignError(f"delta must lie in [0, 1), got {delta}")
    return delta


def sites_1d(n: int, delta: float) -> SiteSet:
    """Sites ``s_i = i * n^{-(1-delta)}``, ``i = 1..n``, on ``(0, n^delta]``."""
    delta = _check_delta(delta)
    if n < 1:
        raise DesignError("n must be positive")
    s = np.arange(1, n + 1) * float(n) ** (-(1.0 - delta))
    return SiteSet(s, 1, delta)


def sites_2d(n: int, delta: float) -> SiteSet:
    """Square lattice ``(i m^{-(1-delta)}, j m^{-(1-delta)})`` with ``m^2 = n``.

    Site ``k = i + (j-1)m`` (1-based), so the first coordinate varies fastest.
    """
    delta = _check_delta(delta)
    m = math.isqrt(n) if n >= 1 else 0
    if n < 1 or m * m != n:
        raise DesignError(f"n = {n} is not a perfect square")
    axis = np.arange(1, m + 1) * float(m) ** (-(1.0 - delta))
    ii, jj = np.meshgrid(np.arange(m), np.arange(m))
    coords = np.column_stack([axis[ii.ravel()], axis[jj.ravel()]])
    return SiteSet(coords, 2, delta, m, _axis=axis)


def f1(s):
    """``s^2 sin(pi / s)``: bounded variation on [0, 1]."""
    s = np.asarray(s, dtype=float)
    return s * s * np.sin(np.pi / s)


def f2(s):
    """``s sin(pi / s)``: not of bounded variation on [0, 1]."""
    s = np.asarray(s, dtype=float)
    return s * np.sin(np.pi / s)


NAMED_FUNCTIONS = {"f1": f1, "f2": f2}
KINDS = ("white_noise", "exp_gp", "monomial", "named_function")


@dataclass(frozen=True)
class RegressorSpec:
    """How to generate one candidate regressor column.

    ``white_noise`` uses ``v2``; ``exp_gp`` uses ``sigma2`` and ``kappa``;
    ``monomial`` uses ``degree``; ``named_function`` uses ``function``.
    """

    kind: str
    v2: float | None = None
    sigma2: float | None = None
    kappa: float | None = None
    degree: int | None = None
    function: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DesignError(f"unknown regressor kind {self.kind!r}")
        if self.kind == "white_noise" and not (self.v2 is not None and self.v2 > 0):
            raise DesignError("white_noise regressor needs v2 > 0")
        if self.kind == "exp_gp" and not (
                self.sigma2 is not None and self.sigma2 > 0
                and self.kappa is not None and self.kappa > 0):
            raise DesignError("exp_gp regressor needs sigma2 > 0 and kappa > 0")
        if self.kind == "monomial" and not (self.degree is not None and self.degree >= 1):
            raise DesignError("monomial regressor needs degree >= 1")
        if self.kind == "named_function" and self.function not in NAMED_FUNCTIONS:
            raise DesignError(f"unknown function {self.function!r}; use f1 or f2")

    @property
    def stochastic(self) -> bool:
        return self.kind in ("white_noise", "exp_gp")

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


def regressor_column(spec: RegressorSpec, sites: SiteSet,
                     rng: np.random.Generator | None = None) -> np.ndarray:
    """Evaluate or draw a single regressor column at ``sites``."""
    n = sites.n
    if spec.kind == "white_noise":
        return math.sqrt(spec.v2) * rng.standard_normal(n)
    if spec.kind == "exp_gp":
        from .covariance import CovParams, covariance_for
        cov = covariance_for(CovParams(0.0, spec.sigma2, spec.kappa), sites)
        return cov.color(rng.standard_normal(n))
    if sites.dim != 1:
        raise DesignError(f"{spec.kind} regressors are defined on 1D sites only")
    s = sites.coords
    if spec.kind == "monomial":
        delta = sites.delta or 0.0
        j = spec.degree
        # scale n^{-delta j} keeps the column within [-1, 1] as the domain grows
        return (s * float(n) ** (-delta)) ** j
    if np.any(s == 0):
        raise DesignError(f"{spec.function} is undefined at s = 0")
    return NAMED_FUNCTIONS[spec.function](s)


def gen_regressors(specs: Sequence[RegressorSpec], sites: SiteSet, seed=0) -> np.ndarray:
    """Design matrix ``[1, x_1, ..., x_p]`` of shape ``(n, p + 1)``.

    ``seed`` is an int or a tuple of ints; column ``j`` (1-based) draws from
    the Philox stream keyed by ``(*seed, REGRESSORS, j)``, so columns are
    independent of one another and of the response noise streams.
    """
    key = tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)
    cols = [np.ones(sites.n)]
    for j, spec in enumerate(specs, start=1):
        rng = seeding.generator(*key, seeding.REGRESSORS, j) if spec.stochastic else None
        cols.append(regressor_column(spec, sites, rng))
    return np.column_stack(cols)
