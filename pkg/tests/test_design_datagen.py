import math

import numpy as np
import pytest

from geogic import seeding
from geogic.covariance import CovParams
from geogic.datagen import DataError, Dataset, TruthSpec, simulate_dataset, simulate_many
from geogic.design import (DesignError, RegressorSpec, SiteSet, f1, f2, gen_regressors,
                           regressor_column, sites_1d, sites_2d)

from conftest import THETA0, dense_exp_cov


def test_sites_1d_examples():
    assert np.allclose(sites_1d(4, 0.0).coords, [0.25, 0.5, 0.75, 1.0])
    assert np.allclose(sites_1d(4, 0.5).coords, [0.5, 1.0, 1.5, 2.0])
    assert np.allclose(sites_1d(1, 0.7).coords, [1.0])
    with pytest.raises(DesignError):
        sites_1d(4, 1.0)


def test_sites_2d_examples():
    s = sites_2d(4, 0.0)
    assert np.allclose(s.coords, [[0.5, 0.5], [1, 0.5], [0.5, 1], [1, 1]])
    assert np.allclose(s.lattice_axis(), [0.5, 1.0])
    assert np.allclose(sites_2d(1, 0.3).coords, [[1.0, 1.0]])
    with pytest.raises(DesignError, match="not a perfect square"):
        sites_2d(5, 0.0)


def test_imported_lattice_is_detected():
    s = SiteSet(sites_2d(9, 0.0).coords.copy(), 2)
    assert s.lattice_axis() is not None
    assert SiteSet(sites_2d(9, 0.0).coords[::-1].copy(), 2).lattice_axis() is None


def test_monomial_columns():
    X = gen_regressors([RegressorSpec("monomial", degree=1)], sites_1d(4, 0.0))
    assert np.allclose(X[:, 0], 1.0)
    assert np.allclose(X[:, 1], [0.25, 0.5, 0.75, 1.0])
    # growing domain: the scale keeps the largest value at 1
    sites = sites_1d(50, 0.6)
    for j in (1, 2, 3):
        col = regressor_column(RegressorSpec("monomial", degree=j), sites)
        assert np.abs(col).max() == pytest.approx(1.0)
    raw = regressor_column(RegressorSpec("monomial", degree=2), sites_1d(50, 0.0))
    assert np.allclose(raw, sites_1d(50, 0.0).coords ** 2)


def test_named_functions():
    s = np.array([0.25, 0.5, 1.0])
    assert np.allclose(f1(s), s * s * np.sin(np.pi / s))
    assert np.allclose(f2(s), s * np.sin(np.pi / s))
    with pytest.raises(DesignError):
        regressor_column(RegressorSpec("named_function", function="f1"), SiteSet([0.0, 1.0], 1))
    with pytest.raises(DesignError):
        RegressorSpec("named_function", function="f3")


def test_white_noise_moments():
    col = gen_regressors([RegressorSpec("white_noise", v2=1.0)], sites_1d(2000, 0.0), 7)[:, 1]
    assert -0.07 < col.mean() < 0.07
    assert 0.9 < col.var() < 1.1


def test_exp_gp_lag1_correlation():
    sites = sites_1d(500, 0.0)
    spec = RegressorSpec("exp_gp", sigma2=1.0, kappa=1.0)
    cols = np.column_stack([gen_regressors([spec], sites, (3, r))[:, 1] for r in range(200)])
    c0 = np.mean(cols * cols)
    c1 = np.mean(cols[1:] * cols[:-1])
    assert c1 / c0 == pytest.approx(math.exp(-1 / 500), abs=0.05)


def test_regressors_bit_identical_and_independent_columns():
    specs = [RegressorSpec("white_noise", v2=1.0)] * 2
    a = gen_regressors(specs, sites_1d(20, 0.0), (1, 2, 3))
    b = gen_regressors(specs, sites_1d(20, 0.0), (1, 2, 3))
    assert np.array_equal(a, b)
    assert not np.array_equal(a[:, 1], a[:, 2])
    # column j does not depend on how many other columns exist
    c = gen_regressors(specs[:1], sites_1d(20, 0.0), (1, 2, 3))
    assert np.array_equal(a[:, 1], c[:, 1])


def test_regressor_spec_validation():
    for bad in (dict(kind="white_noise"), dict(kind="exp_gp", sigma2=1.0),
                dict(kind="monomial", degree=0), dict(kind="spline")):
        with pytest.raises(DesignError):
            RegressorSpec(**bad)


def test_monomial_is_1d_only():
    with pytest.raises(DesignError):
        regressor_column(RegressorSpec("monomial", degree=1), sites_2d(4, 0.0))


# -- seeding -------------------------------------------------------------------

def test_seed_derivation_is_stable_and_key_sensitive():
    assert seeding.derive_seed(42, 0, 0, 1) == seeding.derive_seed(42, 0, 0, 1)
    keys = {seeding.derive_seed(42, a, b, c) for a in range(3) for b in range(3) for c in range(3)}
    assert len(keys) == 27
    assert seeding.derive_seed(1, 2) != seeding.derive_seed(2, 1)
    x = seeding.generator(5, 1).standard_normal(4)
    assert np.array_equal(x, seeding.generator(5, 1).standard_normal(4))


def test_mix64_is_a_64bit_word():
    for v in (0, 1, 2 ** 64 - 1, 123456789):
        assert 0 <= seeding.mix64(v) < 2 ** 64


# -- data generation -----------------------------------------------------------

def test_noiseless_hook_gives_exact_mean():
    sites = sites_1d(25, 0.0)
    X = gen_regressors([RegressorSpec("monomial", degree=1)], sites)
    truth = TruthSpec((2.0, -1.0), CovParams(0.0, 0.5, 1.0))
    d = simulate_dataset(truth, X, sites, 0, zero_eta=True)
    assert np.array_equal(d.Z, X @ np.array([2.0, -1.0]))
    assert truth.true_model == (1,)


def test_simulation_is_deterministic():
    sites = sites_1d(30, 0.0)
    X = gen_regressors([RegressorSpec("named_function", function="f2")], sites)
    truth = TruthSpec((1.0, 1.0), THETA0)
    a = simulate_dataset(truth, X, sites, (4, 5))
    b = simulate_dataset(truth, X, sites, (4, 5))
    assert np.array_equal(a.Z, b.Z)
    assert np.allclose(a.Z, a.mu0 + a.noise)


def test_table1_noise_variance_and_lag1_covariance():
    n = 100
    sites = sites_1d(n, 0.0)
    X = gen_regressors([RegressorSpec("named_function", function="f2")], sites)
    truth = TruthSpec((1.0, 1.0), THETA0)
    data = simulate_many(truth, X, sites, [(9, r) for r in range(2000)])
    E = np.array([d.Z - X @ np.array(truth.beta0) for d in data])
    assert 0.85 < E[:1000, 50].var() < 1.15
    lag1 = np.mean(E[:, 49] * E[:, 50])
    assert lag1 == pytest.approx(0.5 * math.exp(-0.01), abs=0.1)


def test_empirical_covariance_converges():
    n, reps = 6, 20000
    sites = sites_1d(n, 0.5)
    X = np.ones((n, 1))
    truth = TruthSpec((0.0,), THETA0)
    E = np.array([d.noise for d in simulate_many(truth, X, sites, [(1, r) for r in range(reps)])])
    S0 = dense_exp_cov(THETA0, sites.coords)
    emp = E.T @ E / reps
    se = np.sqrt((S0 ** 2 + np.outer(np.diag(S0), np.diag(S0))) / reps)
    assert np.all(np.abs(emp - S0) <= 3.5 * se)


def test_dataset_validation():
    sites = sites_1d(3, 0.0)
    with pytest.raises(DataError):
        Dataset([1.0, 2.0], np.ones((3, 1)), sites)
    with pytest.raises(DataError):
        Dataset([1.0, np.nan, 2.0], np.ones((3, 1)), sites)
    d = Dataset([1.0, 2.0, 3.0], np.ones(3), sites)
    assert d.p == 0 and d.n == 3
    with pytest.raises(ValueError):
        d.Z[0] = 5.0


def test_beta_length_mismatch():
    sites = sites_1d(4, 0.0)
    with pytest.raises(DataError):
        simulate_dataset(TruthSpec((1.0,), THETA0), np.ones((4, 2)), sites)


def test_zeta_is_added_to_the_mean_but_not_to_x():
    sites = sites_1d(10, 0.0)
    X = np.ones((10, 1))
    truth = TruthSpec((1.0,), THETA0, zeta=RegressorSpec("monomial", degree=2), zeta_scale=3.0)
    d = simulate_dataset(truth, X, sites, 0, zero_eta=True, zero_eps=True)
    assert np.allclose(d.Z, 1.0 + 3.0 * sites.coords ** 2)
    assert d.p == 0
