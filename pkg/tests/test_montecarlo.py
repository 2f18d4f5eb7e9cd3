import json
import math
from dataclasses import replace

import numpy as np
import pytest

from geogic.design import RegressorSpec, sites_1d
from geogic.montecarlo import (THETA0, ExperimentConfig, consistency_sweep, run_experiment,
                               sweep_config, table1_preset, trajectory)
from geogic.selection import TauRule

from oracles import exact_bic_pick_probability


def tiny(**kw):
    cfg = sweep_config("whitenoise", ns=(30, 60), replicates=4, seed=5)
    return replace(cfg, **kw) if kw else cfg


def test_huge_penalty_single_replicate():
    res = run_experiment(tiny(replicates=1, tau_rules=(TauRule("const", 1e6),), box=None))
    for c in res.cells:
        assert c.counts["∅"] == 1 and sum(c.counts.values()) == 1


def test_rerun_is_bit_identical():
    a = run_experiment(tiny())
    b = run_experiment(tiny())
    assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)


def test_jobs_do_not_change_results():
    cfg = tiny(box=None)
    a = run_experiment(cfg, jobs=1)
    b = run_experiment(cfg, jobs=2)
    assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)


def test_counts_plus_failures_equal_replicates():
    res = run_experiment(tiny(tau_rules=(TauRule("aic"), TauRule("bic"))))
    assert len(res.cells) == 4
    for c in res.cells:
        assert sum(c.counts.values()) + c.failures == c.replicates
        assert 0.0 <= c.boundary_rate <= 1.0
        assert c.median_efficiency is None or c.median_efficiency >= 1.0
    rows = res.frequency_rows()
    assert {r["model"] for r in rows} == {"∅", "{1}", "{2}", "{1,2}"}
    assert set(rows[0]) == {"function", "n", "delta", "tau", "model", "count", "frequency"}


def test_config_round_trip():
    cfg = tiny()
    again = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
    with pytest.raises(ValueError, match="unknown config fields"):
        ExperimentConfig.from_dict({**cfg.to_dict(), "bogus": 1})


def test_config_validation():
    with pytest.raises(ValueError):
        tiny(replicates=0)
    with pytest.raises(ValueError):
        replace(tiny(), dim=2, ns=(10,))


def test_table1_preset_shape():
    f1, f2 = table1_preset()
    assert [m.label for m in f1.models()] == ["∅", "{1}"]
    assert f1.tau_rules == (TauRule("bic"),)
    assert f1.box is None and f1.truth.theta0 == THETA0
    assert sites_1d(100, f1.deltas[0]).coords[-1] == 1.0
    assert f2.regressors == (RegressorSpec("named_function", function="f2"),)


def test_table1_cells_agree_with_exact_probabilities():
    # known theta: the selection event has an exact noncentral chi-square probability
    ns = (100, 300)
    reps = 200
    for cfg in table1_preset(replicates=reps, seed=7, ns=ns):
        res = run_experiment(replace(cfg, compute_loss=False))
        fn = cfg.regressors[0].function
        for n in ns:
            sites = sites_1d(n, 0.0)
            from geogic.design import NAMED_FUNCTIONS
            p = exact_bic_pick_probability(NAMED_FUNCTIONS[fn](sites.coords), THETA0, sites)
            freq = res.cell(n).frequency("{1}")
            assert abs(freq - p) <= 3 * math.sqrt(p * (1 - p) / reps) + 1e-9, (fn, n, freq, p)


def test_loss_efficiency_reported():
    cfg = table1_preset(replicates=20, seed=1, ns=(200,))[1]
    cell = run_experiment(cfg).cells[0]
    assert cell.median_efficiency >= 1.0 and cell.mean_loss >= 0.0


def test_trajectory_and_sweep():
    res = consistency_sweep("whitenoise", ns=(40, 80), replicates=3, seed=2, box=None)
    traj = trajectory(res, "{1}")
    assert [n for n, _ in traj] == [40, 80]
    assert all(0.0 <= f <= 1.0 for _, f in traj)
    with pytest.raises(ValueError):
        sweep_config("splines")


def test_failures_are_recorded_not_raised(monkeypatch):
    import geogic.montecarlo as mc
    from geogic.mle import OptimizationError

    real = mc.fit_universe
    calls = {"n": 0}

    def flaky(*args, **kw):
        calls["n"] += 1
        if calls["n"] % 2 == 0:
            raise OptimizationError("simplex diverged")
        return real(*args, **kw)

    monkeypatch.setattr(mc, "fit_universe", flaky)
    res = run_experiment(tiny(ns=(30,), replicates=4, box=None))
    cell = res.cells[0]
    assert cell.failures == 2 and sum(cell.counts.values()) == 2
    assert cell.aborted
    assert cell.failure_messages == ["OptimizationError: simplex diverged"]


def test_two_dimensional_experiment_runs():
    cfg = ExperimentConfig(name="grid", truth=replace(tiny().truth,
                                                      theta0=replace(THETA0, v2=0.0)),
                           regressors=tiny().regressors, ns=(16,), dim=2, replicates=2,
                           compute_loss=True)
    res = run_experiment(cfg)
    assert res.cells[0].failures == 0
