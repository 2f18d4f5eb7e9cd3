"""Box-constrained maximization of the profile log-likelihood over theta.

Search runs in ``u = (log(v2 + floor), log sigma2, log kappa)``: a coarse grid
over the box, then Nelder-Mead from the best few grid points with proposals
clamped to the box. ``floor = 1e-8 * var(Z)`` keeps ``v2 = 0`` reachable.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable

import numpy as np
from scipy.optimize import minimize

from .covariance import CovParams, SingularCovarianceError, ThetaBox
from .datagen import Dataset
from .likelihood import (ModelAlpha, SingularDesignError, loglik_from_whitened,
                         whiten_data)

AXES = ("v2", "sigma2", "kappa")


class OptimizationError(RuntimeError):
    def __init__(self, msg, trace=()):
        super().__init__(msg)
        self.trace = list(trace)


@dataclass(frozen=True)
class MleOptions:
    box: ThetaBox
    resolution: int = 7
    tol: float = 1e-8
    max_iter: int = 200
    multistart: int = 3

    def __post_init__(self):
        if self.resolution < 2:
            raise ValueError("grid resolution must be >= 2")
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.multistart < 1 or self.max_iter < 1:
            raise ValueError("multistart and max_iter must be >= 1")


@dataclass
class MleResult:
    theta_hat: CovParams
    loglik: float
    trace: list = field(default_factory=list)
    n_evals: int = 0
    boundary: tuple[str, ...] = ()

    @property
    def hit_boundary(self) -> bool:
        return bool(self.boundary)


class _Transform:
    def __init__(self, box: ThetaBox, floor: float):
        self.box = box
        self.floor = floor
        self.lo = np.array([math.log(box.lo[0] + floor), math.log(box.lo[1]), math.log(box.lo[2])])
        self.hi = np.array([math.log(box.hi[0] + floor), math.log(box.hi[1]), math.log(box.hi[2])])
        self.free = [i for i in range(3) if box.lo[i] < box.hi[i]]

    def to_theta(self, u) -> CovParams:
        u = np.clip(u, self.lo, self.hi)
        vals = [math.exp(u[0]) - self.floor, math.exp(u[1]), math.exp(u[2])]
        # exact box endpoints survive the round trip
        for i in range(3):
            if u[i] <= self.lo[i]:
                vals[i] = self.box.lo[i]
            elif u[i] >= self.hi[i]:
                vals[i] = self.box.hi[i]
        return self.box.clip(vals)

    def grid(self, resolution: int) -> list[np.ndarray]:
        axes = [np.linspace(self.lo[i], self.hi[i], resolution) if i in self.free
                else np.array([self.lo[i]]) for i in range(3)]
        return [np.array(u) for u in itertools.product(*axes)]

    def boundary(self, theta: CovParams) -> tuple[str, ...]:
        hits = []
        t = theta.as_tuple()
        for i in self.free:
            span = self.box.hi[i] - self.box.lo[i]
            if min(t[i] - self.box.lo[i], self.box.hi[i] - t[i]) <= 1e-6 * span:
                hits.append(AXES[i])
        return tuple(hits)


def _rank_key(value: float, theta: CovParams):
    # larger value first, then smaller kappa, then smaller sigma2
    return (-value, theta.kappa, theta.sigma2)


def maximize_in_box(keys: Iterable[Hashable],
                    eval_all: Callable[[CovParams], dict],
                    eval_one: Callable[[Hashable, CovParams], float],
                    opts: MleOptions, floor: float) -> dict:
    """Grid + multistart simplex maximization for several objectives at once.

    ``eval_all(theta)`` returns ``{key: value}`` for every key; a value may be
    nan or the exception that prevented it, whose message is kept for the
    error report. ``eval_one(key, theta)`` evaluates a single objective. Returns
    ``{key: MleResult | OptimizationError}``.
    """
    keys = list(keys)
    tr = _Transform(opts.box, floor)
    grid_u = tr.grid(opts.resolution)
    grid_theta = [tr.to_theta(u) for u in grid_u]
    values = {k: np.full(len(grid_u), np.nan) for k in keys}
    reasons: dict = {}
    for g, theta in enumerate(grid_theta):
        try:
            res = eval_all(theta)
        except (SingularCovarianceError, FloatingPointError, np.linalg.LinAlgError) as exc:
            for k in keys:
                reasons.setdefault(k, str(exc))
            continue
        for k in keys:
            v = res[k]
            if isinstance(v, Exception):
                reasons.setdefault(k, str(v))
                continue
            values[k][g] = v

    out = {}
    for k in keys:
        vals = values[k]
        finite = np.flatnonzero(np.isfinite(vals))
        trace = []
        if len(finite) == 0:
            why = f": {reasons[k]}" if k in reasons else ""
            out[k] = OptimizationError(f"all {len(vals)} grid evaluations non-finite for {k}{why}")
            continue
        order = sorted(finite, key=lambda g: _rank_key(vals[g], grid_theta[g]))
        best_g = order[0]
        best = (float(vals[best_g]), grid_theta[best_g])
        trace.append(("grid", best[1].as_tuple(), best[0]))
        n_evals = len(vals)
        candidates = [best]

        if tr.free:
            steps = (tr.hi - tr.lo) / (opts.resolution - 1)
            for g in order[:opts.multistart]:
                u0 = grid_u[g].copy()
                state = {"best": best[0], "n": 0}

                def negobj(x, u0=u0, state=state, k=k):
                    u = u0.copy()
                    u[tr.free] = x
                    theta = tr.to_theta(u)
                    state["n"] += 1
                    try:
                        v = eval_one(k, theta)
                    except (SingularCovarianceError, SingularDesignError,
                            FloatingPointError, np.linalg.LinAlgError):
                        return math.inf
                    if not math.isfinite(v):
                        return math.inf
                    if v > state["best"]:
                        state["best"] = v
                        trace.append(("simplex", theta.as_tuple(), v))
                    return -v

                x0 = u0[tr.free]
                simplex = [x0]
                for d, i in enumerate(tr.free):
                    x = x0.copy()
                    step = steps[i]
                    x[d] = x0[d] + step if x0[d] + step <= tr.hi[i] else x0[d] - step
                    simplex.append(x)
                r = minimize(negobj, x0, method="Nelder-Mead",
                             bounds=list(zip(tr.lo[tr.free], tr.hi[tr.free])),
                             options={"initial_simplex": np.array(simplex),
                                      "maxiter": opts.max_iter, "fatol": opts.tol,
                                      "xatol": 1e-6})
                n_evals += state["n"]
                if np.isfinite(r.fun):
                    u = u0.copy()
                    u[tr.free] = r.x
                    candidates.append((-float(r.fun), tr.to_theta(u)))
                best = max(best, candidates[-1], key=lambda c: (c[0], -c[1].kappa, -c[1].sigma2))

        value, theta = min(candidates, key=lambda c: _rank_key(*c))
        out[k] = MleResult(theta, value, trace, n_evals, tr.boundary(theta))
    return out


def _floor(data: Dataset) -> float:
    var = float(np.var(data.Z))
    return 1e-8 * (var if var > 0 else 1.0)


def fit_models(alphas: Iterable[ModelAlpha], data: Dataset, opts: MleOptions) -> dict:
    """Fit ``theta_hat(alpha)`` for every model, sharing the grid phase.

    Returns ``{alpha: MleResult | OptimizationError}``.
    """
    alphas = list(alphas)

    def eval_all(theta):
        w = whiten_data(theta, data)
        res = {}
        for a in alphas:
            try:
                res[a] = loglik_from_whitened(a, w).loglik
            except SingularDesignError as exc:
                res[a] = exc
        return res

    def eval_one(a, theta):
        return loglik_from_whitened(a, whiten_data(theta, data)).loglik

    return maximize_in_box(alphas, eval_all, eval_one, opts, _floor(data))


def fit_theta(alpha: ModelAlpha, data: Dataset, opts: MleOptions) -> MleResult:
    """Maximize ``profile_loglik(alpha, theta, data)`` over ``opts.box``."""
    res = fit_models([alpha], data, opts)[alpha]
    if isinstance(res, Exception):
        raise res
    return res
