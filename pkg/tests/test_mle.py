import math

import numpy as np
import pytest

from geogic.covariance import CovParams, ThetaBox
from geogic.likelihood import model, profile_loglik
from geogic.mle import MleOptions, OptimizationError, fit_models, fit_theta, maximize_in_box

from conftest import THETA0, small_dataset
from oracles import grid_search


def test_singleton_box_returns_the_point():
    data, _ = small_dataset(n=40, seed=2)
    theta = CovParams(0.37, 0.81, 2.3)
    res = fit_theta(model(1), data, MleOptions(ThetaBox.singleton(theta)))
    assert res.theta_hat == theta
    assert res.loglik == profile_loglik(model(1), theta, data)
    assert res.boundary == ()


def test_partly_fixed_box_keeps_fixed_coordinates():
    data, _ = small_dataset(n=40, seed=2)
    box = ThetaBox((0.5, 0.1, 1.0), (0.5, 3.0, 1.0))
    res = fit_theta(model(1), data, MleOptions(box))
    assert res.theta_hat.v2 == 0.5 and res.theta_hat.kappa == 1.0


def test_beats_truth_on_larger_sample():
    data, _ = small_dataset(n=400, seed=4, delta=0.5)
    box = ThetaBox((0.1,) * 3, (2.0,) * 3)
    res = fit_theta(model(1, 2), data, MleOptions(box))
    assert res.loglik >= profile_loglik(model(1, 2), THETA0, data)
    assert box.contains(res.theta_hat)


@pytest.mark.parametrize("seed", range(3))
def test_matches_dense_grid_oracle(seed):
    data, _ = small_dataset(n=100, seed=100 + seed)
    lo, hi = (0.1, 0.1, 0.1), (2.0, 2.0, 2.0)
    res = fit_theta(model(1, 2), data, MleOptions(ThetaBox(lo, hi)))
    oracle, _ = grid_search(data, [0, 1, 2], lo, hi, points=11)
    assert res.loglik >= oracle - 0.05


def test_trace_is_monotone_and_ends_at_result():
    data, _ = small_dataset(n=60, seed=9)
    res = fit_theta(model(1), data, MleOptions(ThetaBox((0.01, 0.05, 0.1), (5, 5, 10))))
    values = [v for _, _, v in res.trace]
    assert all(b >= a for a, b in zip(values, values[1:]))
    assert res.loglik == pytest.approx(max(values))
    assert res.n_evals >= 7 ** 3


def test_permutation_invariance():
    data, _ = small_dataset(n=50, seed=5)
    perm = np.random.default_rng(0).permutation(50)
    opts = MleOptions(ThetaBox((0.05, 0.05, 0.1), (3, 3, 8)))
    a = fit_theta(model(1, 2), data, opts)
    b = fit_theta(model(1, 2), data.take(perm), opts)
    assert b.loglik == pytest.approx(a.loglik, abs=1e-8)


def test_shared_grid_matches_separate_fits():
    data, _ = small_dataset(n=50, seed=6)
    opts = MleOptions(ThetaBox((0.05, 0.05, 0.1), (3, 3, 8)))
    both = fit_models([model(), model(1)], data, opts)
    alone = fit_theta(model(1), data, opts)
    assert both[model(1)].loglik == alone.loglik
    assert both[model(1)].theta_hat == alone.theta_hat


def test_boundary_is_flagged():
    data, _ = small_dataset(n=60, seed=1, theta=CovParams(0.5, 0.5, 1.0))
    # the sill is pinned against a box far too small for it
    res = fit_theta(model(1, 2), data, MleOptions(ThetaBox((0.01, 0.01, 0.5), (2.0, 0.02, 2.0))))
    assert "sigma2" in res.boundary
    assert res.hit_boundary


def test_all_nonfinite_grid_is_an_error():
    box = ThetaBox((0.1, 0.1, 0.1), (1.0, 1.0, 1.0))
    out = maximize_in_box(["k"], lambda th: {"k": math.nan}, lambda k, th: math.nan,
                          MleOptions(box), 1e-8)
    assert isinstance(out["k"], OptimizationError)
    with pytest.raises(ValueError):
        MleOptions(box, resolution=1)


def test_tie_break_prefers_smaller_kappa():
    box = ThetaBox((0.1, 0.1, 0.1), (1.0, 1.0, 1.0))
    # flat objective: every grid point ties, so the smallest kappa and sigma2 win
    out = maximize_in_box(["k"], lambda th: {"k": 0.0}, lambda k, th: 0.0,
                          MleOptions(box, multistart=1), 1e-8)["k"]
    assert out.theta_hat.kappa == 0.1 and out.theta_hat.sigma2 == 0.1
