"""Exponential covariance models, their factorizations and an eigenvalue diagnostic.

Three factorized representations share one interface (``logdet``, ``whiten``,
``color``, ``solve``, ``dense``):

``dense``
    Lower Cholesky factor of the assembled matrix, with one jittered retry.
``kronecker``
    ``sigma2 * B kron B`` for the 2D multiplicative model on a square lattice
    with no nugget; only the ``m x m`` factor ``B`` is factorized.
``markov``
    The 1D exponential-plus-nugget model is an Ornstein-Uhlenbeck process
    observed with white noise, so its Cholesky factor is produced by an O(n)
    innovations recursion (see :mod:`geogic._kernels`). Sites are sorted
    internally; whitened rows come out in sorted order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import _kernels
from .design import SiteSet


class CovarianceError(ValueError):
    """Invalid covariance parameters or representation request."""


class SingularCovarianceError(np.linalg.LinAlgError):
    """Raised when a covariance matrix cannot be factorized."""


@dataclass(frozen=True)
class CovParams:
    """Covariance parameters ``(v2, sigma2, kappa)``: nugget, sill and decay rate."""

    v2: float
    sigma2: float
    kappa: float

    def __post_init__(self):
        vals = (self.v2, self.sigma2, self.kappa)
        if not all(math.isfinite(x) for x in vals):
            raise CovarianceError(f"non-finite covariance parameters {vals}")
        if self.v2 < 0 or self.sigma2 <= 0 or self.kappa <= 0:
            raise CovarianceError(
                f"need v2 >= 0, sigma2 > 0, kappa > 0; got {vals}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (float(self.v2), float(self.sigma2), float(self.kappa))

    @classmethod
    def from_seq(cls, values) -> "CovParams":
        v2, sigma2, kappa = (float(x) for x in values)
        return cls(v2, sigma2, kappa)


@dataclass(frozen=True)
class ThetaBox:
    """Closed box ``[lo, hi]`` per coordinate of ``(v2, sigma2, kappa)``."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self):
        lo = tuple(float(x) for x in self.lo)
        hi = tuple(float(x) for x in self.hi)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if len(lo) != 3 or len(hi) != 3:
            raise CovarianceError("ThetaBox needs three bounds per side")
        if not all(math.isfinite(x) for x in lo + hi):
            raise CovarianceError("ThetaBox bounds must be finite")
        if lo[0] < 0 or lo[1] <= 0 or lo[2] <= 0:
            raise CovarianceError(f"ThetaBox lower bounds out of range: {lo}")
        if any(a > b for a, b in zip(lo, hi)):
            raise CovarianceError(f"ThetaBox has lo > hi: {lo} vs {hi}")

    @classmethod
    def singleton(cls, theta: CovParams) -> "ThetaBox":
        t = theta.as_tuple()
        return cls(t, t)

    @property
    def is_singleton(self) -> bool:
        return self.lo == self.hi

    def contains(self, theta: CovParams, rtol: float = 1e-12) -> bool:
        for x, a, b in zip(theta.as_tuple(), self.lo, self.hi):
            slack = rtol * max(abs(a), abs(b), 1.0)
            if x < a - slack or x > b + slack:
                return False
        return True

    def clip(self, values) -> CovParams:
        return CovParams.from_seq(np.clip(np.asarray(values, float), self.lo, self.hi))


@dataclass(frozen=True, eq=False)
class CovMatrix:
    """An immutable, already-factorized covariance matrix.

    Attributes
    ----------
    kind : {"dense", "kronecker", "markov"}
    n : int
    logdet : float
    jitter : float
        Diagonal jitter added on the retry after a failed Cholesky (0 if none).
    """

    kind: str
    n: int
    logdet: float
    theta: CovParams | None = None
    jitter: float = 0.0
    _matrix: np.ndarray | None = field(default=None, repr=False)
    _chol: np.ndarray | None = field(default=None, repr=False)
    _sigma2: float = field(default=1.0, repr=False)
    _coords: np.ndarray | None = field(default=None, repr=False)
    _order: np.ndarray | None = field(default=None, repr=False)

    # -- representation-independent operations -------------------------------

    def whiten(self, Y) -> np.ndarray:
        """Return ``L^{-1} P Y`` where ``L L' = P Sigma P'``.

        ``P`` is the identity except in markov mode, where it sorts the sites.
        Inner products of whitened vectors are therefore ``Y' Sigma^{-1} Y``.
        """
        Y = np.asarray(Y, dtype=float)
        vec = Y.ndim == 1
        Y2 = Y.reshape(self.n, -1)
        if self.kind == "dense":
            W = sla.solve_triangular(self._chol, Y2, lower=True, check_finite=False)
        elif self.kind == "kronecker":
            W = self._kron_apply(Y2, inverse=True)
        else:
            W, _ = _kernels.whiten(self._coords, *self.theta.as_tuple(),
                                   np.ascontiguousarray(Y2[self._order]))
        return W[:, 0] if vec else W

    def color(self, U) -> np.ndarray:
        """Return ``P' L U``: for standard normal ``U``, columns have covariance Sigma."""
        U = np.asarray(U, dtype=float)
        vec = U.ndim == 1
        U2 = U.reshape(self.n, -1)
        if self.kind == "dense":
            X = self._chol @ U2
        elif self.kind == "kronecker":
            X = self._kron_apply(U2, inverse=False)
        else:
            Xs = _kernels.color(self._coords, *self.theta.as_tuple(),
                                np.ascontiguousarray(U2))
            X = np.empty_like(Xs)
            X[self._order] = Xs
        return X[:, 0] if vec else X

    def solve(self, Y) -> np.ndarray:
        """Return ``Sigma^{-1} Y`` in the original site order."""
        Y = np.asarray(Y, dtype=float)
        vec = Y.ndim == 1
        Y2 = Y.reshape(self.n, -1)
        if self.kind == "dense":
            X = sla.cho_solve((self._chol, True), Y2, check_finite=False)
        elif self.kind == "kronecker":
            W = self._kron_apply(Y2, inverse=True)
            X = self._kron_apply(W, inverse=True, transpose=True)
        else:
            # L^{-1} itself is whiten(I) in sorted order: O(n^2) through the kernel
            Linv = _kernels.whiten(self._coords, *self.theta.as_tuple(), np.eye(self.n))[0]
            Xs = Linv.T @ (Linv @ Y2[self._order])
            X = np.empty_like(Xs)
            X[self._order] = Xs
        return X[:, 0] if vec else X

    def dense(self) -> np.ndarray:
        """Materialize the full ``n x n`` matrix in the original site order."""
        if self._matrix is not None:
            return self._matrix.copy()
        if self.kind == "kronecker":
            B = self._chol @ self._chol.T
            return self._sigma2 * np.kron(B, B)
        return _exp1d(self.theta, self._coords_original())

    # -- helpers ---------------------------------------------------------------

    def _coords_original(self) -> np.ndarray:
        out = np.empty_like(self._coords)
        out[self._order] = self._coords
        return out

    def _kron_apply(self, Y2, inverse, transpose=False):
        # rows are ordered i + (j-1)m with the first coordinate fastest, so a
        # C-order reshape gives T[j, i, col] and (L kron L) acts on both axes
        m = self._chol.shape[0]
        k = Y2.shape[1]
        L = self._chol
        if inverse:
            def op(A):
                return sla.solve_triangular(L, A, lower=True, trans=int(transpose),
                                            check_finite=False)
        else:
            def op(A):
                return L @ A
        T = op(Y2.reshape(m, m * k)).reshape(m, m, k)
        T = op(T.transpose(1, 0, 2).reshape(m, m * k)).reshape(m, m, k)
        T = T.transpose(1, 0, 2).reshape(m * m, k)
        s = math.sqrt(self._sigma2)
        return T / s if inverse else T * s


def _exp1d(theta: CovParams, coords: np.ndarray) -> np.ndarray:
    d = np.abs(coords[:, None] - coords[None, :])
    S = theta.sigma2 * np.exp(-theta.kappa * d)
    S[np.diag_indices_from(S)] += theta.v2
    return S


def _duplicate_pair(coords: np.ndarray) -> tuple[int, int] | None:
    c = coords.reshape(len(coords), -1)
    seen: dict[tuple, int] = {}
    for i, row in enumerate(map(tuple, c)):
        if row in seen:
            return seen[row], i
        seen[row] = i
    return None


def cholesky_with_jitter(S: np.ndarray, coords: np.ndarray | None = None):
    """Lower Cholesky factor of ``S``; one retry with ``1e-10 * trace/n`` jitter.

    Returns ``(L, jitter)``.
    """
    try:
        return np.linalg.cholesky(S), 0.0
    except np.linalg.LinAlgError:
        pass
    n = S.shape[0]
    jitter = 1e-10 * float(np.trace(S)) / n
    try:
        return np.linalg.cholesky(S + jitter * np.eye(n)), jitter
    except np.linalg.LinAlgError:
        msg = "covariance matrix is not positive definite"
        if coords is not None:
            pair = _duplicate_pair(np.asarray(coords))
            if pair is not None:
                msg += f"; sites {pair[0]} and {pair[1]} coincide"
        raise SingularCovarianceError(msg) from None


def from_dense(S: np.ndarray, theta: CovParams | None = None,
               coords: np.ndarray | None = None) -> CovMatrix:
    """Factorize an arbitrary symmetric positive definite matrix."""
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise CovarianceError("covariance must be square")
    scale = max(np.abs(S).max(), 1e-300)
    if np.abs(S - S.T).max() > 1e-12 * scale:
        raise CovarianceError("covariance matrix is not symmetric")
    L, jitter = cholesky_with_jitter(S, coords)
    logdet = 2.0 * float(np.log(np.diag(L)).sum())
    S.setflags(write=False)
    return CovMatrix("dense", S.shape[0], logdet, theta, jitter, _matrix=S, _chol=L)


def cov_matrix_1d(theta: CovParams, sites: SiteSet) -> CovMatrix:
    """Dense ``sigma2 * exp(-kappa|s_i - s_j|) + v2 * 1{i=j}`` with its Cholesky factor."""
    if sites.dim != 1:
        raise CovarianceError("cov_matrix_1d needs 1D sites")
    coords = sites.coords
    return from_dense(_exp1d(theta, coords), theta, coords)


def _markov_pass(theta: CovParams, sites: SiteSet, Ys: np.ndarray):
    t = sites.sorted_1d()[1]
    try:
        return _kernels.whiten(t, *theta.as_tuple(), Ys)
    except FloatingPointError:
        pair = _duplicate_pair(sites.coords)
        msg = "covariance matrix is singular"
        if pair is not None:
            msg += f"; sites {pair[0]} and {pair[1]} coincide and v2 = 0"
        raise SingularCovarianceError(msg) from None


def _markov(theta: CovParams, sites: SiteSet, logdet: float) -> CovMatrix:
    order, t = sites.sorted_1d()
    return CovMatrix("markov", len(t), float(logdet), theta, _coords=t, _order=order)


def sequential_cov_1d(theta: CovParams, sites: SiteSet) -> CovMatrix:
    """Same matrix as :func:`cov_matrix_1d`, factorized by the O(n) recursion."""
    if sites.dim != 1:
        raise CovarianceError("sequential_cov_1d needs 1D sites")
    _, logdet = _markov_pass(theta, sites, np.zeros((sites.n, 1)))
    return _markov(theta, sites, logdet)


def factor_and_whiten(theta: CovParams, sites: SiteSet, Y,
                      presorted: bool = False) -> tuple[CovMatrix, np.ndarray]:
    """``(covariance_for(theta, sites), cov.whiten(Y))`` in a single pass where possible.

    With ``presorted=True`` the rows of 1D ``Y`` are already in sorted-site order.
    """
    if sites.dim != 1:
        cov = covariance_for(theta, sites)
        return cov, cov.whiten(Y)
    Y = np.asarray(Y, dtype=float)
    Ys = Y.reshape(sites.n, -1)
    if not presorted:
        Ys = Ys[sites.sorted_1d()[0]]
    Ys = np.ascontiguousarray(Ys)
    W, logdet = _markov_pass(theta, sites, Ys)
    return _markov(theta, sites, logdet), (W[:, 0] if Y.ndim == 1 else W)


def cov_matrix_2d_mult(theta: CovParams, grid: SiteSet,
                       kronecker: bool | None = None) -> CovMatrix:
    """Multiplicative model ``sigma2 * exp(-kappa(|ds1| + |ds2|)) (+ v2 I)``.

    ``kronecker=None`` picks the Kronecker form whenever it is valid (square
    lattice, ``v2 == 0``) and the dense form otherwise.
    """
    if grid.dim != 2:
        raise CovarianceError("cov_matrix_2d_mult needs 2D sites")
    axis = grid.lattice_axis()
    if kronecker is None:
        kronecker = axis is not None and theta.v2 == 0
    if kronecker:
        if axis is None:
            m = math.isqrt(grid.n)
            if m * m != grid.n:
                raise CovarianceError(f"n = {grid.n} is not a perfect square")
            raise CovarianceError("sites do not form an ordered square lattice")
        if theta.v2 > 0:
            raise CovarianceError("Kronecker mode requires v2 = 0")
        B = np.exp(-theta.kappa * np.abs(axis[:, None] - axis[None, :]))
        LB, jitter = cholesky_with_jitter(B, axis)
        m = len(axis)
        logdet = 2 * m * 2.0 * float(np.log(np.diag(LB)).sum()) + m * m * math.log(theta.sigma2)
        return CovMatrix("kronecker", m * m, logdet, theta, jitter,
                         _chol=LB, _sigma2=theta.sigma2)
    c = grid.coords
    d = np.abs(c[:, None, 0] - c[None, :, 0]) + np.abs(c[:, None, 1] - c[None, :, 1])
    S = theta.sigma2 * np.exp(-theta.kappa * d)
    S[np.diag_indices_from(S)] += theta.v2
    return from_dense(S, theta, c)


def covariance_for(theta: CovParams, sites: SiteSet, fast: bool = True) -> CovMatrix:
    """Factorized covariance for ``sites``, using the fastest valid representation."""
    if sites.dim == 1:
        return sequential_cov_1d(theta, sites) if fast else cov_matrix_1d(theta, sites)
    return cov_matrix_2d_mult(theta, sites, kronecker=None if fast else False)


def eigen_bound_diagnostic(theta_grid, theta0: CovParams, sites: SiteSet) -> dict:
    """Extreme eigenvalues of ``Sigma(theta)^{-1/2} Sigma(theta0) Sigma(theta)^{-1/2}`` over a grid.

    Computed as generalized eigenvalues of the pencil ``(Sigma(theta0), Sigma(theta))``.
    Returns ``{"min_lambda_min", "max_lambda_max", "argmin", "argmax"}``.
    """
    S0 = covariance_for(theta0, sites, fast=False).dense()
    lo, hi = math.inf, -math.inf
    arg_lo = arg_hi = None
    for theta in theta_grid:
        S = covariance_for(theta, sites, fast=False).dense()
        try:
            ev = sla.eigh(S0, S, eigvals_only=True)
        except np.linalg.LinAlgError as exc:
            raise SingularCovarianceError(f"factorization failed at {theta}: {exc}") from None
        if ev[0] < lo:
            lo, arg_lo = float(ev[0]), theta
        if ev[-1] > hi:
            hi, arg_hi = float(ev[-1]), theta
    if arg_lo is None:
        raise CovarianceError("empty theta grid")
    return {"min_lambda_min": lo, "max_lambda_max": hi,
            "argmin": arg_lo, "argmax": arg_hi}
