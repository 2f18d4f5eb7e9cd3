"""Seeded replication engine for selection experiments.

A replicate is keyed by ``(seed, n_index, delta_index, replicate)``; its
regressor, eta and eps draws come from disjoint Philox streams derived from
that key (see :mod:`geogic.seeding`). Replicates are independent tasks and
their outcomes are merged in replicate order, so results do not depend on the
number of worker processes.
"""

from __future__ import annotations

import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .covariance import CovParams, ThetaBox
from .datagen import TruthSpec, simulate_dataset
from .design import RegressorSpec, gen_regressors, sites_1d, sites_2d
from .likelihood import ModelAlpha
from .mle import MleOptions
from .oracle import LOSS_FLOOR, kl_loss
from .selection import TauRule, enumerate_models, fit_universe

MAX_FAILURE_RATE = 0.05
THETA0 = CovParams(0.5, 0.5, 1.0)
DEFAULT_BOX = ThetaBox((0.01, 0.05, 0.1), (5.0, 5.0, 10.0))


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to rerun an experiment bit-for-bit.

    ``box=None`` means known covariance parameters (the singleton box at
    ``truth.theta0``). Regressors are redrawn for every replicate.
    """

    name: str
    truth: TruthSpec
    regressors: tuple[RegressorSpec, ...]
    ns: tuple[int, ...]
    deltas: tuple[float, ...] = (0.0,)
    tau_rules: tuple[TauRule, ...] = (TauRule("bic"),)
    universe: object = "all"
    mode: str = "per_model"
    replicates: int = 100
    seed: int = 0
    box: ThetaBox | None = None
    resolution: int = 7
    tol: float = 1e-8
    max_iter: int = 200
    multistart: int = 3
    dim: int = 1
    compute_loss: bool = True

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if len(self.truth.beta0) != len(self.regressors) + 1:
            raise ValueError("beta0 must have one entry per regressor plus the intercept")
        for n in self.ns:
            if n < 1 or (self.dim == 2 and math.isqrt(n) ** 2 != n):
                raise ValueError(f"n = {n} is not admissible for {self.dim}D sites")

    @property
    def p(self) -> int:
        return len(self.regressors)

    def mle_options(self) -> MleOptions:
        box = self.box if self.box is not None else ThetaBox.singleton(self.truth.theta0)
        return MleOptions(box, self.resolution, self.tol, self.max_iter, self.multistart)

    def models(self) -> list[ModelAlpha]:
        return enumerate_models(self.p, self.universe)

    def to_dict(self) -> dict:
        t = self.truth
        return {
            "name": self.name,
            "truth": {"beta0": list(t.beta0), "theta0": list(t.theta0.as_tuple()),
                      "zeta": None if t.zeta is None else t.zeta.to_dict(),
                      "zeta_scale": t.zeta_scale},
            "regressors": [r.to_dict() for r in self.regressors],
            "ns": list(self.ns),
            "deltas": list(self.deltas),
            "tau_rules": [r.label for r in self.tau_rules],
            "universe": (self.universe if isinstance(self.universe, str)
                         else [list(ModelAlpha(tuple(m)).indices) if not isinstance(m, ModelAlpha)
                               else list(m.indices) for m in self.universe]),
            "mode": self.mode,
            "replicates": self.replicates,
            "seed": self.seed,
            "box": None if self.box is None else {"lo": list(self.box.lo), "hi": list(self.box.hi)},
            "resolution": self.resolution,
            "tol": self.tol,
            "max_iter": self.max_iter,
            "multistart": self.multistart,
            "dim": self.dim,
            "compute_loss": self.compute_loss,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        t = d["truth"]
        zeta = t.get("zeta")
        truth = TruthSpec(tuple(t["beta0"]), CovParams.from_seq(t.get("theta0", THETA0.as_tuple())),
                          RegressorSpec(**zeta) if zeta else None, t.get("zeta_scale", 1.0))
        box = d.get("box")
        universe = d.get("universe", "all")
        if not isinstance(universe, str):
            universe = tuple(ModelAlpha(tuple(m)) for m in universe)
        known = {"name", "truth", "regressors", "ns", "deltas", "tau_rules", "universe",
                 "mode", "replicates", "seed", "box", "resolution", "tol", "max_iter",
                 "multistart", "dim", "compute_loss"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(
            name=d.get("name", "experiment"),
            truth=truth,
            regressors=tuple(RegressorSpec(**r) for r in d["regressors"]),
            ns=tuple(int(n) for n in d["ns"]),
            deltas=tuple(float(x) for x in d.get("deltas", [0.0])),
            tau_rules=tuple(TauRule.parse(r) for r in d.get("tau_rules", ["bic"])),
            universe=universe,
            mode=d.get("mode", "per_model").replace("-", "_"),
            replicates=int(d.get("replicates", 100)),
            seed=int(d.get("seed", 0)),
            box=None if box is None else ThetaBox(tuple(box["lo"]), tuple(box["hi"])),
            resolution=int(d.get("resolution", 7)),
            tol=float(d.get("tol", 1e-8)),
            max_iter=int(d.get("max_iter", 200)),
            multistart=int(d.get("multistart", 3)),
            dim=int(d.get("dim", 1)),
            compute_loss=bool(d.get("compute_loss", True)),
        )


@dataclass
class CellResult:
    """Aggregates for one ``(n, delta, tau rule)`` cell.

    ``counts`` plus ``failures`` always sums to the replicate count.
    """

    n: int
    delta: float
    tau_rule: str
    tau: float
    counts: dict
    failures: int
    replicates: int
    aborted: bool = False
    mean_loss: float | None = None
    median_loss: float | None = None
    median_efficiency: float | None = None
    mean_efficiency: float | None = None
    floored_losses: int = 0
    boundary_rate: float = 0.0
    excluded_fits: int = 0
    failure_messages: list = field(default_factory=list)

    def frequency(self, label: str) -> float:
        return self.counts.get(label, 0) / self.replicates

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ExperimentResult:
    config: dict
    cells: list

    def cell(self, n: int, delta: float = 0.0, tau_rule: str | None = None) -> CellResult:
        for c in self.cells:
            if c.n == n and c.delta == delta and (tau_rule is None or c.tau_rule == tau_rule):
                return c
        raise KeyError((n, delta, tau_rule))

    def frequency_rows(self) -> list[dict]:
        rows = []
        for c in self.cells:
            for label in self.config["models"]:
                cnt = c.counts.get(label, 0)
                rows.append({"function": self.config["name"], "n": c.n, "delta": c.delta,
                             "tau": c.tau_rule, "model": label, "count": cnt,
                             "frequency": cnt / c.replicates})
        return rows

    def to_dict(self) -> dict:
        return {"config": self.config, "cells": [c.to_dict() for c in self.cells]}


# -- replicate execution --------------------------------------------------------

def _sites(config: ExperimentConfig, n: int, delta: float):
    return sites_1d(n, delta) if config.dim == 1 else sites_2d(n, delta)


def _replicate(config: ExperimentConfig, ni: int, di: int, r: int, cache: dict) -> dict:
    n, delta = config.ns[ni], config.deltas[di]
    if (ni, di) not in cache:
        sites = _sites(config, n, delta)
        truth_cov = config.truth.covariance(sites)
        cache.clear()
        cache[(ni, di)] = (sites, truth_cov, config.truth.eta_covariance(sites),
                           truth_cov.color(np.eye(n)) if config.compute_loss else None)
    sites, truth_cov, eta_cov, truth_color = cache[(ni, di)]
    key = (config.seed, ni, di, r)
    try:
        X = gen_regressors(config.regressors, sites, key)
        data = simulate_dataset(config.truth, X, sites, key, eta_cov=eta_cov)
        fits = fit_universe(data, config.models(), config.mle_options(), config.mode)
        out = {"ok": True, "winners": {}, "losses": None, "boundary": 0, "excluded": 0}
        for res in fits.fits.values():
            if isinstance(res, Exception):
                out["excluded"] += 1
            elif res.boundary:
                out["boundary"] += 1
        if config.compute_loss:
            losses = {}
            for a, res in fits.fits.items():
                if not isinstance(res, Exception):
                    losses[a.label] = kl_loss(a, res.theta_hat, data, truth_cov,
                                              direct=False, truth_color=truth_color).total
            out["losses"] = losses
        for rule in config.tau_rules:
            out["winners"][rule.label] = fits.pick(rule).winner.label
        return out
    except Exception as exc:  # failures are data, never retried
        return {"ok": False, "error": f"{type(exc).__name__}: {exc}"}


def _run_chunk(args) -> list:
    config, tasks = args
    cache: dict = {}
    with threadpool_limits(limits=1):
        return [(t, _replicate(config, *t, cache)) for t in tasks]


def _aggregate(config: ExperimentConfig, outcomes: dict) -> list[CellResult]:
    models = [m.label for m in config.models()]
    cells = []
    for ni, n in enumerate(config.ns):
        for di, delta in enumerate(config.deltas):
            reps = [outcomes[(ni, di, r)] for r in range(config.replicates)]
            ok = [o for o in reps if o["ok"]]
            fails = [o["error"] for o in reps if not o["ok"]]
            n_fits = len(ok) * len(models)
            for rule in config.tau_rules:
                counts = {m: 0 for m in models}
                sel_losses, effs, floored = [], [], 0
                for o in ok:
                    w = o["winners"][rule.label]
                    counts[w] += 1
                    if o["losses"]:
                        lmin = min(o["losses"].values())
                        if lmin <= LOSS_FLOOR:
                            floored += 1
                            lmin = LOSS_FLOOR
                        sel_losses.append(o["losses"][w])
                        effs.append(max(o["losses"][w], lmin) / lmin)
                cells.append(CellResult(
                    n=n, delta=delta, tau_rule=rule.label, tau=rule(n), counts=counts,
                    failures=len(fails), replicates=config.replicates,
                    aborted=len(fails) > MAX_FAILURE_RATE * config.replicates,
                    mean_loss=statistics.fmean(sel_losses) if sel_losses else None,
                    median_loss=statistics.median(sel_losses) if sel_losses else None,
                    median_efficiency=statistics.median(effs) if effs else None,
                    mean_efficiency=statistics.fmean(effs) if effs else None,
                    floored_losses=floored,
                    boundary_rate=(sum(o["boundary"] for o in ok) / n_fits) if n_fits else 0.0,
                    excluded_fits=sum(o["excluded"] for o in ok),
                    failure_messages=sorted(set(fails))[:5],
                ))
    return cells


def run_experiment(config: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    """Run every ``(n, delta)`` cell and aggregate per tau rule.

    Output is identical for any ``jobs``; cells with more than 5% failed
    replicates are flagged ``aborted``.
    """
    tasks = [(ni, di, r) for ni in range(len(config.ns))
             for di in range(len(config.deltas)) for r in range(config.replicates)]
    if jobs <= 1:
        results = _run_chunk((config, tasks))
    else:
        size = max(1, math.ceil(len(tasks) / (4 * jobs)))
        chunks = [tasks[i:i + size] for i in range(0, len(tasks), size)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = [x for part in pool.map(_run_chunk, [(config, c) for c in chunks])
                       for x in part]
    outcomes = dict(results)
    echo = config.to_dict()
    echo["models"] = [m.label for m in config.models()]
    echo["tool_version"] = __version__
    echo["regressor_draws"] = "resampled per replicate"
    echo["penalty"] = "p(alpha) = |alpha|, intercept excluded"
    echo["tau_rate_conditions"] = "reported only, not checked against delta"
    return ExperimentResult(echo, _aggregate(config, outcomes))


# -- presets --------------------------------------------------------------------

def table1_preset(replicates: int = 100, seed: int = 42,
                  ns: Sequence[int] = (100, 500, 1000)) -> list[ExperimentConfig]:
    """The bounded-variation simulation: ``mu(s) = 1 + f(s)`` with ``f = f1`` or ``f2``.

    Known ``theta0 = (0.5, 0.5, 1)``, sites ``{1/n, ..., 1}``, BIC, universe
    ``{∅, {1}}``.
    """
    truth = TruthSpec((1.0, 1.0), THETA0)
    return [ExperimentConfig(name=f, truth=truth,
                             regressors=(RegressorSpec("named_function", function=f),),
                             ns=tuple(ns), deltas=(0.0,), tau_rules=(TauRule("bic"),),
                             universe="all", replicates=replicates, seed=seed, box=None)
            for f in ("f1", "f2")]


SWEEP_PRESETS = {
    # white-noise regressors: x1 active, x2 spurious
    "whitenoise": dict(beta0=(1.0, 1.0, 0.0),
                       regressors=(RegressorSpec("white_noise", v2=1.0),) * 2,
                       universe="all"),
    # exponential-GP regressors with faster decay than eta
    "expgp": dict(beta0=(1.0, 1.0, 0.0),
                  regressors=(RegressorSpec("exp_gp", sigma2=1.0, kappa=2.0),) * 2,
                  universe="all"),
    # polynomial order selection: linear truth, nested universe
    "monomial": dict(beta0=(1.0, 1.0, 0.0),
                     regressors=(RegressorSpec("monomial", degree=1),
                                 RegressorSpec("monomial", degree=2)),
                     universe="nested"),
}


def sweep_config(example: str, deltas=(0.0,), ns=(100, 400, 1600), tau_rule="bic",
                 replicates: int = 200, seed: int = 0, box: ThetaBox | None = DEFAULT_BOX,
                 **overrides) -> ExperimentConfig:
    try:
        preset = SWEEP_PRESETS[example]
    except KeyError:
        raise ValueError(f"unknown example {example!r}; choose from {sorted(SWEEP_PRESETS)}") from None
    rule = tau_rule if isinstance(tau_rule, TauRule) else TauRule.parse(tau_rule)
    cfg = ExperimentConfig(name=example, truth=TruthSpec(preset["beta0"], THETA0),
                           regressors=preset["regressors"], ns=tuple(ns),
                           deltas=tuple(float(d) for d in deltas), tau_rules=(rule,),
                           universe=preset["universe"], replicates=replicates, seed=seed,
                           box=box)
    return replace(cfg, **overrides) if overrides else cfg


def consistency_sweep(example: str, deltas=(0.0,), ns=(100, 400, 1600), tau_rule="bic",
                      replicates: int = 200, seed: int = 0, jobs: int = 1,
                      **overrides) -> ExperimentResult:
    """Selection frequencies across ``n`` for one of the regressor families.

    ``example`` is ``whitenoise``, ``expgp`` or ``monomial`` (nested universe).
    The true model is ``{1}`` in each preset.
    """
    return run_experiment(sweep_config(example, deltas, ns, tau_rule, replicates, seed,
                                       **overrides), jobs)


def trajectory(result: ExperimentResult, label: str, delta: float = 0.0,
               tau_rule: str | None = None) -> list[tuple[int, float]]:
    """``[(n, frequency of model label)]`` in the configured ``n`` order."""
    return [(c.n, c.frequency(label)) for c in result.cells
            if c.delta == delta and (tau_rule is None or c.tau_rule == tau_rule)]
