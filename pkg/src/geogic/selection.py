"""Candidate enumeration, GIC scores and the selection rule."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

from .covariance import CovParams
from .datagen import Dataset
from .likelihood import ModelAlpha, SingularDesignError, profile_loglik
from .mle import MleOptions, MleResult, OptimizationError, fit_models

MAX_ALL_SUBSETS = 20


class SelectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class TauRule:
    """Penalty per regressor as a function of ``n``.

    ``kind`` is ``aic`` (2), ``bic`` (log n), ``power`` (n^a) or ``const``.
    """

    kind: str = "bic"
    value: float | None = None

    def __post_init__(self):
        if self.kind not in ("aic", "bic", "power", "const"):
            raise ValueError(f"unknown tau rule {self.kind!r}")
        if self.kind == "const" and not (self.value is not None and self.value > 0):
            raise ValueError("constant tau must be positive")
        if self.kind == "power" and self.value is None:
            raise ValueError("power tau needs an exponent")

    def __call__(self, n: int) -> float:
        if self.kind == "aic":
            return 2.0
        if self.kind == "bic":
            return math.log(n)
        if self.kind == "power":
            return float(n) ** self.value
        return float(self.value)

    @property
    def label(self) -> str:
        if self.kind in ("aic", "bic"):
            return self.kind
        return f"{'pow' if self.kind == 'power' else 'const'}:{self.value:g}"

    @classmethod
    def parse(cls, text: str) -> "TauRule":
        """Parse ``aic``, ``bic``, ``const:<x>`` or ``pow:<a>``."""
        t = text.strip().lower()
        if t in ("aic", "bic"):
            return cls(t)
        head, _, tail = t.partition(":")
        if head in ("const", "pow", "power") and tail:
            return cls("const" if head == "const" else "power", float(tail))
        raise ValueError(f"cannot parse tau rule {text!r}")


def enumerate_models(p: int, universe="all") -> list[ModelAlpha]:
    """Candidate models ordered by size, then lexicographically; ``∅`` first.

    ``universe`` is ``"all"`` (every subset, ``p <= 20``), ``"nested"``
    (``∅, {1}, {1,2}, ...``) or an explicit sequence of models.
    """
    if p < 0:
        raise ValueError("p must be >= 0")
    if isinstance(universe, str):
        if universe in ("all", "all_subsets"):
            if p > MAX_ALL_SUBSETS:
                raise ValueError(
                    f"all-subsets universe limited to p <= {MAX_ALL_SUBSETS}; pass an explicit list")
            models = [ModelAlpha(c) for k in range(p + 1)
                      for c in itertools.combinations(range(1, p + 1), k)]
        elif universe == "nested":
            models = [ModelAlpha(tuple(range(1, k + 1))) for k in range(p + 1)]
        else:
            raise ValueError(f"unknown universe {universe!r}")
    else:
        models = sorted({m if isinstance(m, ModelAlpha) else ModelAlpha(tuple(m))
                         for m in universe}, key=ModelAlpha.sort_key)
    return sorted(models, key=ModelAlpha.sort_key)


def gic_score(loglik: float, alpha: ModelAlpha, tau: float) -> float:
    """``-2 loglik + tau * p(alpha)``, intercept excluded from ``p(alpha)``."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    return -2.0 * loglik + tau * alpha.size


def gic_score_for(alpha: ModelAlpha, tau: float, data: Dataset,
                  theta: CovParams | None = None, opts: MleOptions | None = None) -> float:
    """GIC of one model with either a shared ``theta`` or its own fitted one."""
    if theta is not None:
        ll = profile_loglik(alpha, theta, data)
    elif opts is not None:
        res = fit_models([alpha], data, opts)[alpha]
        if isinstance(res, Exception):
            raise res
        ll = res.loglik
    else:
        raise ValueError("need a shared theta or MLE options")
    return gic_score(ll, alpha, tau)


@dataclass(frozen=True)
class GicConfig:
    tau: TauRule = TauRule("bic")
    mode: str = "per_model"
    universe: object = "all"

    def __post_init__(self):
        if self.mode not in ("per_model", "common"):
            raise ValueError(f"unknown estimation mode {self.mode!r}")


@dataclass
class ModelRecord:
    alpha: ModelAlpha
    theta: CovParams | None
    loglik: float
    score: float
    boundary: tuple[str, ...] = ()
    error: str | None = None

    @property
    def excluded(self) -> bool:
        return self.error is not None


@dataclass
class SelectionReport:
    records: list[ModelRecord]
    winner: ModelAlpha
    tau: float
    tau_rule: str
    mode: str
    penalty: str = "p(alpha) = |alpha|, intercept excluded"
    ties: list[ModelAlpha] = field(default_factory=list)

    def record(self, alpha: ModelAlpha) -> ModelRecord:
        for r in self.records:
            if r.alpha == alpha:
                return r
        raise KeyError(alpha)

    def to_dict(self) -> dict:
        return {
            "winner": self.winner.label,
            "tau": self.tau,
            "tau_rule": self.tau_rule,
            "mode": self.mode,
            "penalty": self.penalty,
            "ties": [a.label for a in self.ties],
            "models": [
                {"model": r.alpha.label,
                 "theta": None if r.theta is None else dict(zip(("v2", "sigma2", "kappa"),
                                                               r.theta.as_tuple())),
                 "loglik": r.loglik if math.isfinite(r.loglik) else None,
                 "gic": r.score if math.isfinite(r.score) else None,
                 "boundary": list(r.boundary),
                 "excluded": r.error}
                for r in self.records],
        }


@dataclass
class ModelFits:
    """Fitted log-likelihoods per model, reusable for several tau rules."""

    n: int
    mode: str
    fits: dict  # ModelAlpha -> MleResult | Exception

    def pick(self, tau_rule: TauRule, penalty_offset: int = 0) -> SelectionReport:
        """Score every model and select the minimum-GIC one.

        ``penalty_offset`` adds a constant to every ``p(alpha)`` (used to check
        that counting the intercept does not move the argmin).
        """
        tau = tau_rule(self.n)
        records = []
        for alpha in sorted(self.fits, key=ModelAlpha.sort_key):
            res = self.fits[alpha]
            if isinstance(res, Exception):
                records.append(ModelRecord(alpha, None, math.nan, math.nan,
                                           error=f"{type(res).__name__}: {res}"))
                continue
            score = gic_score(res.loglik, alpha, tau) + tau * penalty_offset
            records.append(ModelRecord(alpha, res.theta_hat, res.loglik, score, res.boundary))
        ok = [r for r in records if not r.excluded]
        if not ok:
            raise SelectionError("every candidate model failed to fit")
        best = min(r.score for r in ok)
        tied = sorted((r.alpha for r in ok if r.score == best), key=ModelAlpha.sort_key)
        return SelectionReport(records, tied[0], tau, tau_rule.label, self.mode,
                               ties=tied if len(tied) > 1 else [])


def fit_universe(data: Dataset, models: Sequence[ModelAlpha], opts: MleOptions,
                 mode: str = "per_model") -> ModelFits:
    """Fit every candidate model under per-model or common theta estimation."""
    models = list(models)
    if mode == "per_model":
        return ModelFits(data.n, mode, fit_models(models, data, opts))
    full = ModelAlpha(tuple(range(1, data.p + 1)))
    res = fit_models([full], data, opts)[full]
    if isinstance(res, Exception):
        raise SelectionError(f"common-theta fit under the full model failed: {res}")
    theta = res.theta_hat
    fits = {}
    for a in models:
        try:
            ll = profile_loglik(a, theta, data)
            fits[a] = MleResult(theta, ll, boundary=res.boundary)
        except SingularDesignError as exc:
            fits[a] = exc
    return ModelFits(data.n, mode, fits)


def select(data: Dataset, config: GicConfig, opts: MleOptions) -> SelectionReport:
    """Select ``argmin GIC`` over the configured universe.

    Ties go to the smallest ``p(alpha)``, then the lexicographically first model.
    Models whose fit fails are excluded and annotated in the report.
    """
    models = enumerate_models(data.p, config.universe)
    return fit_universe(data, models, opts, config.mode).pick(config.tau)


__all__ = ["TauRule", "GicConfig", "SelectionReport", "ModelRecord", "ModelFits",
           "enumerate_models", "gic_score", "gic_score_for", "fit_universe", "select",
           "SelectionError", "OptimizationError"]
