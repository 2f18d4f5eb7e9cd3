"""Command-line front end: ``geogic <subcommand> ...``.

Exit status is 0 on success, 2 for configuration or input errors and 3 for
numerical failures (singular matrices, failed optimizations).

File formats
------------
dataset CSV
    Header ``s1,z,x1,...,xp`` (1D) or ``s1,s2,z,x1,...,xp`` (2D), one site per
    row, values written with 17 significant digits. The intercept column is
    implicit.
frequency CSV
    ``function,n,delta,tau,model,count,frequency``, one row per
    ``(cell, candidate model)`` in configuration order.
result JSON
    ``{"config": <config echo>, "cells": [...]}`` with sorted keys.
manifest.json
    Tool version, sha256 of the canonical config echo, master seed,
    timestamps and a sha256 inventory of every file written.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .covariance import CovParams, ThetaBox
from .datagen import DataError, Dataset, simulate_dataset
from .design import SiteSet, gen_regressors, sites_1d, sites_2d
from .likelihood import ModelAlpha
from .mle import MleOptions, OptimizationError, fit_theta
from .montecarlo import (DEFAULT_BOX, SWEEP_PRESETS, ExperimentConfig, ExperimentResult,
                         run_experiment, sweep_config, table1_preset)
from .oracle import gamma_k, kappa_star
from .selection import GicConfig, SelectionError, TauRule, select

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
FREQ_COLUMNS = ("function", "n", "delta", "tau", "model", "count", "frequency")


class ConfigError(ValueError):
    """Bad flags, config file or input data; maps to exit status 2."""


# -- dataset CSV ----------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_dataset_csv(data: Dataset, path) -> None:
    """Write ``s1[,s2],z,x1..xp``; the intercept column is not written."""
    coords = data.sites.coords.reshape(data.n, -1)
    head = [f"s{k + 1}" for k in range(coords.shape[1])] + ["z"] + \
        [f"x{j}" for j in range(1, data.p + 1)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(head)
        for i in range(data.n):
            w.writerow([_fmt(v) for v in (*coords[i], data.Z[i], *data.X[i, 1:])])


def read_dataset_csv(path) -> Dataset:
    """Read a dataset CSV; problems are reported with their file line number."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty file")
    head = [h.strip().lower() for h in rows[0]]
    dim = 2 if head[:2] == ["s1", "s2"] else 1
    expected = ["s1", "s2"][:dim] + ["z"]
    p = len(head) - dim - 1
    expected += [f"x{j}" for j in range(1, p + 1)]
    if head != expected:
        raise ConfigError(f"{path}: line 1: header must be {','.join(expected)}, got {','.join(head)}")
    vals = []
    for line, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(head):
            raise ConfigError(f"{path}: line {line}: expected {len(head)} fields, got {len(row)}")
        try:
            rec = [float(v) for v in row]
        except ValueError as exc:
            raise ConfigError(f"{path}: line {line}: {exc}") from None
        if not all(math.isfinite(v) for v in rec):
            bad = head[next(k for k, v in enumerate(rec) if not math.isfinite(v))]
            raise ConfigError(f"{path}: line {line}: non-finite value in column {bad}")
        vals.append((line, rec))
    if not vals:
        raise ConfigError(f"{path}: no data rows")
    seen = {}
    for line, rec in vals:
        key = tuple(rec[:dim])
        if key in seen:
            raise ConfigError(f"{path}: line {line}: duplicate site {key} (first on line {seen[key]})")
        seen[key] = line
    A = np.array([r for _, r in vals])
    coords = A[:, :dim] if dim == 2 else A[:, 0]
    X = np.column_stack([np.ones(len(A)), A[:, dim + 1:]])
    return Dataset(A[:, dim], X, SiteSet(coords, dim))


# -- manifest -------------------------------------------------------------------

def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def config_digest(echo: dict) -> str:
    return hashlib.sha256(canonical_json(echo).encode("utf-8")).hexdigest()


def _now() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = (_dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc) if epoch
         else _dt.datetime.now(_dt.timezone.utc))
    return t.replace(microsecond=0).isoformat()


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    started: str = field(default_factory=_now)
    finished: str | None = None
    outputs: list = field(default_factory=list)

    def add(self, path: Path) -> None:
        data = path.read_bytes()
        self.outputs.append({"file": path.name, "bytes": len(data),
                             "sha256": hashlib.sha256(data).hexdigest()})

    def to_dict(self) -> dict:
        return {"tool": "geogic", "version": __version__, "command": self.command,
                "config": self.config, "config_sha256": config_digest(self.config),
                "seed": self.seed, "started": self.started, "finished": self.finished,
                "outputs": self.outputs}

    def write(self, out: Path) -> Path:
        self.finished = _now()
        path = out / "manifest.json"
        path.write_text(canonical_json(self.to_dict()), encoding="utf-8")
        return path


# -- argument helpers -----------------------------------------------------------

def _floats(text: str, count: int | None, flag: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise ConfigError(f"{flag}: cannot parse {text!r} as comma-separated numbers") from None
    if count is not None and len(vals) != count:
        raise ConfigError(f"{flag}: expected {count} values, got {len(vals)}")
    return vals


def _theta(text: str) -> CovParams:
    try:
        return CovParams(*_floats(text, 3, "--known-theta"))
    except ValueError as exc:
        raise ConfigError(f"--known-theta: {exc}") from None


def _box(text: str) -> ThetaBox:
    # per-parameter pairs: v2_lo,v2_hi,sigma2_lo,sigma2_hi,kappa_lo,kappa_hi
    v = _floats(text, 6, "--box")
    try:
        return ThetaBox((v[0], v[2], v[4]), (v[1], v[3], v[5]))
    except ValueError as exc:
        raise ConfigError(f"--box: {exc}") from None


def _tau(text: str) -> TauRule:
    try:
        return TauRule.parse(text)
    except ValueError as exc:
        raise ConfigError(f"--tau: {exc}") from None


def _mode(text: str) -> str:
    return text.replace("-", "_")


def _default_jobs() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def _load_config(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"--config: {exc}") from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return obj


def _mle_options(args, default_box: ThetaBox | None = DEFAULT_BOX) -> MleOptions:
    if args.known_theta is not None:
        box = ThetaBox.singleton(_theta(args.known_theta))
    elif args.box is not None:
        box = _box(args.box)
    elif default_box is not None:
        box = default_box
    else:
        raise ConfigError("need --box or --known-theta")
    return MleOptions(box, resolution=args.resolution)


# -- subcommands ------------------------------------------------------------------

def _experiment_config(args) -> ExperimentConfig:
    """Build from ``--config`` and/or ``--example``; explicit flags win."""
    if args.config:
        raw = _load_config(args.config)
        try:
            cfg = ExperimentConfig.from_dict(raw)
        except KeyError as exc:
            raise ConfigError(f"{args.config}: missing field {exc}") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{args.config}: {exc}") from None
    elif args.example:
        cfg = sweep_config(args.example)
    else:
        raise ConfigError("need --config or --example")
    over = {}
    if args.ns:
        over["ns"] = tuple(int(x) for x in _floats(args.ns, None, "--ns"))
    if args.deltas:
        over["deltas"] = tuple(_floats(args.deltas, None, "--deltas"))
    if args.replicates is not None:
        over["replicates"] = args.replicates
    if args.seed is not None:
        over["seed"] = args.seed
    if args.tau:
        over["tau_rules"] = tuple(_tau(t) for t in args.tau.split(";"))
    if args.mode:
        over["mode"] = _mode(args.mode)
    if args.universe:
        over["universe"] = args.universe
    if args.known_theta is not None:
        theta = _theta(args.known_theta)
        over["box"] = ThetaBox.singleton(theta)
    elif args.box is not None:
        over["box"] = _box(args.box)
    if args.no_loss:
        over["compute_loss"] = False
    try:
        return replace(cfg, **over) if over else cfg
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def write_frequency_csv(results: list[ExperimentResult], path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, FREQ_COLUMNS, lineterminator="\n")
        w.writeheader()
        for res in results:
            for row in res.frequency_rows():
                w.writerow({**row, "frequency": _fmt(row["frequency"])})


def write_svg(results: list[ExperimentResult], path: Path) -> None:
    try:
        import matplotlib
    except ImportError:
        raise ConfigError("--plot needs matplotlib (pip install 'artifact[plot]')") from None
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "geogic"
    rows = [r for res in results for r in res.frequency_rows()]
    groups = sorted({(r["function"], r["delta"], r["tau"]) for r in rows}, key=str)
    fig, axes = plt.subplots(len(groups), 1, figsize=(7, 2.6 * len(groups)), squeeze=False)
    for ax, (fn, delta, tau) in zip(axes[:, 0], groups):
        sub = [r for r in rows if (r["function"], r["delta"], r["tau"]) == (fn, delta, tau)]
        ns = sorted({r["n"] for r in sub})
        models = list(dict.fromkeys(r["model"] for r in sub))
        width = 0.8 / len(models)
        for k, m in enumerate(models):
            freq = [next(r["frequency"] for r in sub if r["n"] == n and r["model"] == m) for n in ns]
            ax.bar(np.arange(len(ns)) + k * width, freq, width, label=m)
        ax.set_xticks(np.arange(len(ns)) + 0.4 - width / 2, [str(n) for n in ns])
        ax.set_ylim(0, 1)
        ax.set_ylabel("frequency")
        ax.set_title(f"{fn}, delta={delta:g}, tau={tau}", fontsize=9)
        ax.legend(fontsize=7, ncol=min(len(models), 4))
    axes[-1, 0].set_xlabel("n")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _emit_experiments(results: list[ExperimentResult], stem: str, out: Path,
                      manifest: RunManifest, plot: bool) -> None:
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{stem}.csv"
    write_frequency_csv(results, csv_path)
    json_path = out / f"{stem}.json"
    payload = results[0].to_dict() if len(results) == 1 else \
        {"experiments": [r.to_dict() for r in results]}
    json_path.write_text(canonical_json(payload), encoding="utf-8")
    manifest.add(csv_path)
    manifest.add(json_path)
    if plot:
        svg = out / f"{stem}.svg"
        write_svg(results, svg)
        manifest.add(svg)
    manifest.write(out)
    for res in results:
        for c in res.cells:
            line = ", ".join(f"{m} {c.counts[m]}" for m in res.config["models"])
            flag = "  ABORTED" if c.aborted else ""
            print(f"{res.config['name']} n={c.n} delta={c.delta:g} {c.tau_rule}: {line}"
                  f" (failures {c.failures}){flag}")


def cmd_experiment(args) -> int:
    cfg = _experiment_config(args)
    manifest = RunManifest("experiment", cfg.to_dict(), cfg.seed)
    result = run_experiment(cfg, jobs=args.jobs)
    _emit_experiments([result], "frequencies", Path(args.out), manifest, args.plot)
    return EXIT_OK


def cmd_table1(args) -> int:
    ns = tuple(int(x) for x in _floats(args.ns, None, "--ns")) if args.ns else (100, 500, 1000)
    configs = table1_preset(args.replicates or 100, 42 if args.seed is None else args.seed, ns)
    echo = {"experiments": [c.to_dict() for c in configs]}
    manifest = RunManifest("table1", echo, configs[0].seed)
    results = [run_experiment(c, jobs=args.jobs) for c in configs]
    _emit_experiments(results, "table1", Path(args.out), manifest, args.plot)
    return EXIT_OK


def cmd_simulate(args) -> int:
    """Replicate 0 of the first ``(n, delta)`` cell of an experiment configuration."""
    cfg = _experiment_config(args)
    n, delta = cfg.ns[0], cfg.deltas[0]
    sites = sites_1d(n, delta) if cfg.dim == 1 else sites_2d(n, delta)
    key = (cfg.seed, 0, 0, 0)
    X = gen_regressors(cfg.regressors, sites, key)
    data = simulate_dataset(cfg.truth, X, sites, key)
    out = Path(args.out)
    if out.suffix.lower() != ".csv":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "dataset.csv"
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset_csv(data, out)
    manifest = RunManifest("simulate", {**cfg.to_dict(), "ns": [n], "deltas": [delta]}, cfg.seed)
    manifest.add(out)
    manifest.write(out.parent)
    print(out)
    return EXIT_OK


def _parse_model(text: str | None, p: int) -> ModelAlpha:
    if text is None:
        return ModelAlpha(tuple(range(1, p + 1)))
    try:
        a = ModelAlpha.parse(text)
    except ValueError as exc:
        raise ConfigError(f"--model: {exc}") from None
    if a.indices and a.indices[-1] > p:
        raise ConfigError(f"--model: {a} refers to a regressor beyond p = {p}")
    return a


def cmd_fit(args) -> int:
    data = read_dataset_csv(args.data)
    alpha = _parse_model(args.model, data.p)
    res = fit_theta(alpha, data, _mle_options(args))
    print(canonical_json({
        "model": alpha.label,
        "theta": dict(zip(("v2", "sigma2", "kappa"), res.theta_hat.as_tuple())),
        "loglik": res.loglik,
        "boundary": list(res.boundary),
        "evaluations": res.n_evals,
    }), end="")
    return EXIT_OK


def cmd_select(args) -> int:
    data = read_dataset_csv(args.data)
    cfg = GicConfig(_tau(args.tau or "bic"), _mode(args.mode or "per_model"),
                    args.universe or "all")
    report = select(data, cfg, _mle_options(args))
    print(canonical_json(report.to_dict()), end="")
    return EXIT_OK


def _omitted(text: str) -> list[tuple[float, float, float]]:
    out = []
    for part in text.split(";"):
        vals = _floats(part, 3, "--omitted")
        out.append(tuple(vals))
    return out


def cmd_constants(args) -> int:
    if args.which == "gamma":
        beta = _floats(args.beta, None, "--beta")
        if args.p is not None and len(beta) != args.p + 1:
            raise ConfigError(f"--beta: need p + 1 = {args.p + 1} coefficients, got {len(beta)}")
        try:
            value = gamma_k(beta, args.k)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    else:
        if args.omitted is None:
            raise ConfigError("kappa needs --omitted beta,sigma2,kappa[;...]")
        value = kappa_star(_omitted(args.omitted), args.sigma0_sq, args.kappa0)
    print(repr(float(value)))
    return EXIT_OK


# -- parser -----------------------------------------------------------------------

def _add_fit_flags(p, with_selection: bool):
    p.add_argument("--known-theta", metavar="V2,SIGMA2,KAPPA",
                   help="fix the covariance parameters (singleton box)")
    p.add_argument("--box", metavar="LO,HI,LO,HI,LO,HI",
                   help="search box as (lo, hi) pairs for v2, sigma2, kappa")
    p.add_argument("--resolution", type=int, default=7, help="grid points per axis")
    if with_selection:
        p.add_argument("--tau", help="aic | bic | const:<x> | pow:<a>")
        p.add_argument("--mode", choices=["per-model", "common"])
        p.add_argument("--universe", choices=["all", "nested"])


def _add_run_flags(p, experiment: bool):
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=_default_jobs(),
                   help="worker processes (output does not depend on this)")
    p.add_argument("--out", default=".")
    p.add_argument("--plot", action="store_true", help="also write an SVG bar chart")
    p.add_argument("--ns", help="comma-separated sample sizes")
    p.add_argument("--replicates", type=int)
    if experiment:
        p.add_argument("--config", help="JSON experiment configuration")
        p.add_argument("--example", choices=sorted(SWEEP_PRESETS))
        p.add_argument("--deltas", help="comma-separated domain-growth exponents")
        p.add_argument("--no-loss", action="store_true", help="skip KL loss bookkeeping")
        p.add_argument("--tau", help="one rule or several separated by ';'")
        p.add_argument("--mode", choices=["per-model", "common"])
        p.add_argument("--universe", choices=["all", "nested"])
        p.add_argument("--known-theta", metavar="V2,SIGMA2,KAPPA")
        p.add_argument("--box", metavar="LO,HI,LO,HI,LO,HI")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="geogic",
                                 description="Information-criterion selection for spatial regression.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write one simulated dataset as CSV")
    _add_run_flags(p, experiment=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="maximum likelihood fit of one model; prints JSON")
    p.add_argument("data")
    p.add_argument("--model", help="e.g. '{1,2}' or '∅' (default: all regressors)")
    _add_fit_flags(p, with_selection=False)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="GIC model selection; prints a JSON report")
    p.add_argument("data")
    _add_fit_flags(p, with_selection=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("experiment", help="Monte Carlo selection frequencies")
    _add_run_flags(p, experiment=True)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("table1", help="bounded-variation mean functions under BIC, known theta")
    _add_run_flags(p, experiment=False)
    p.set_defaults(func=cmd_table1)

    p = sub.add_parser("constants", help="print a closed-form constant")
    p.add_argument("which", choices=["gamma", "kappa"])
    p.add_argument("--p", type=int, help="polynomial degree of the true mean (gamma)")
    p.add_argument("--beta", default="0,1", help="true polynomial coefficients (gamma)")
    p.add_argument("--k", type=int, default=0, help="degree of the fitted polynomial (gamma)")
    p.add_argument("--omitted", help="beta,sigma2,kappa per omitted regressor, ';'-separated")
    p.add_argument("--sigma0-sq", type=float, default=0.5)
    p.add_argument("--kappa0", type=float, default=1.0)
    p.set_defaults(func=cmd_constants)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if getattr(args, "jobs", 1) is not None and getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (np.linalg.LinAlgError, OptimizationError, SelectionError, FloatingPointError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DataError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
