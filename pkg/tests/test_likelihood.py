import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geogic.covariance import CovParams
from geogic.datagen import Dataset
from geogic.design import SiteSet, sites_1d
from geogic.likelihood import (ModelAlpha, SingularDesignError, gls_beta, model,
                               profile_loglik, profile_logliks, projection_matrix)

from conftest import THETA0, dense_exp_cov, small_dataset


def six_term_loglik(alpha, theta, data):
    """Log-likelihood expanded around the true mean, all pieces dense."""
    S = dense_exp_cov(theta, data.sites.coords)
    Si = np.linalg.inv(S)
    Xa = data.X[:, alpha.columns]
    M = Xa @ np.linalg.solve(Xa.T @ Si @ Xa, Xa.T @ Si)
    A = np.eye(data.n) - M
    mu, e = data.mu0, data.noise
    return (-0.5 * data.n * math.log(2 * math.pi) - 0.5 * np.linalg.slogdet(S)[1]
            - 0.5 * mu @ Si @ A @ mu - mu @ Si @ A @ e
            - 0.5 * e @ Si @ e + 0.5 * e @ Si @ M @ e)


def test_model_alpha_basics():
    a = ModelAlpha((3, 1))
    assert a.indices == (1, 3) and a.size == 2 and a.columns == [0, 1, 3]
    assert a.label == "{1,3}" and model().label == "∅"
    assert ModelAlpha.parse("{1,3}") == a and ModelAlpha.parse("∅") == model()
    with pytest.raises(ValueError):
        ModelAlpha((0,))
    with pytest.raises(ValueError):
        ModelAlpha((1, 1))


def test_single_site_intercept_only():
    data = Dataset([3.7], np.ones((1, 1)), SiteSet([1.0], 1))
    ll = profile_loglik(model(), THETA0, data)
    assert ll == pytest.approx(-0.5 * math.log(2 * math.pi * 1.0), abs=1e-12)


def test_hand_example_three_sites():
    sites = SiteSet([1.0, 2.0, 3.0], 1)
    X = np.column_stack([np.ones(3), [0.0, 1.0, 2.0]])
    data = Dataset([1.0, 2.0, 3.0], X, sites)
    fit = gls_beta(model(1), CovParams(0.5, 0.5, 50.0), data)
    assert np.allclose(fit.beta_hat, [1.0, 1.0], atol=1e-10)
    assert np.allclose(fit.residual, 0.0, atol=1e-10)


def test_gls_reduces_to_ols_for_diagonal_covariance(rng):
    sites = SiteSet(np.arange(30) * 100.0, 1)
    X = np.column_stack([np.ones(30), rng.standard_normal((30, 2))])
    Z = rng.standard_normal(30)
    data = Dataset(Z, X, sites)
    fit = gls_beta(model(1, 2), CovParams(0.3, 1.0, 5.0), data)
    ols, *_ = np.linalg.lstsq(X, Z, rcond=None)
    assert np.allclose(fit.beta_hat, ols, atol=1e-8)
    mean_fit = gls_beta(model(), CovParams(0.3, 1.0, 5.0), data)
    assert mean_fit.beta_hat[0] == pytest.approx(Z.mean(), abs=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_six_term_expansion(seed):
    data, _ = small_dataset(n=20, seed=seed)
    for alpha in (model(), model(1), model(1, 2)):
        for theta in (THETA0, CovParams(0.1, 1.5, 3.0)):
            assert profile_loglik(alpha, theta, data) == pytest.approx(
                six_term_loglik(alpha, theta, data), abs=1e-8)


def test_doubling_response_scales_only_the_quadratic_form(rng):
    sites = sites_1d(5, 0.0)
    Z = rng.standard_normal(5)
    a = Dataset(Z, np.ones((5, 1)), sites)
    b = Dataset(2 * Z, np.ones((5, 1)), sites)
    fa, fb = gls_beta(model(), THETA0, a), gls_beta(model(), THETA0, b)
    assert fb.quad == pytest.approx(4 * fa.quad, rel=1e-12)
    assert fb.loglik - fa.loglik == pytest.approx(-1.5 * fa.quad, rel=1e-10)


def test_dense_and_recursive_paths_agree():
    data, _ = small_dataset(n=40, seed=3)
    S = dense_exp_cov(THETA0, data.sites.coords)
    Xa = data.X
    Si = np.linalg.inv(S)
    beta = np.linalg.solve(Xa.T @ Si @ Xa, Xa.T @ Si @ data.Z)
    r = data.Z - Xa @ beta
    ref = -0.5 * (40 * math.log(2 * math.pi) + np.linalg.slogdet(S)[1] + r @ Si @ r)
    assert profile_loglik(model(1, 2), THETA0, data) == pytest.approx(ref, abs=1e-9)


def test_site_permutation_invariance(rng):
    data, _ = small_dataset(n=25, seed=8)
    perm = rng.permutation(25)
    for alpha in (model(), model(2), model(1, 2)):
        assert profile_loglik(alpha, THETA0, data.take(perm)) == pytest.approx(
            profile_loglik(alpha, THETA0, data), abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10 ** 6), v2=st.floats(0.01, 2), s2=st.floats(0.05, 2),
       k=st.floats(0.1, 10))
def test_nested_models_fit_at_least_as_well(seed, v2, s2, k):
    data, _ = small_dataset(n=20, p=3, seed=seed)
    theta = CovParams(v2, s2, k)
    lls = profile_logliks([model(), model(1), model(1, 2), model(1, 2, 3)], theta, data)
    vals = list(lls.values())
    assert all(b >= a - 1e-9 for a, b in zip(vals, vals[1:]))


def test_duplicate_columns_are_reported():
    data, _ = small_dataset(n=15, p=1, seed=0)
    X = np.column_stack([data.X, data.X[:, 1]])
    dup = Dataset(data.Z, X, data.sites)
    with pytest.raises(SingularDesignError) as err:
        profile_loglik(model(1, 2), THETA0, dup)
    assert err.value.dependent == (2,)
    assert math.isnan(profile_logliks([model(1, 2)], THETA0, dup)[model(1, 2)])


def test_model_beyond_p_is_rejected():
    data, _ = small_dataset(n=10, p=1)
    with pytest.raises(ValueError):
        profile_loglik(model(2), THETA0, data)


# -- projections ------------------------------------------------------------------

def projection_cases():
    rng = np.random.default_rng(11)
    grid = [CovParams(v, s, k) for v in (0.05, 0.5, 2.0) for s in (0.1, 1.0, 3.0)
            for k in (0.2, 2.0, 15.0)]
    for theta in grid:
        n = int(rng.integers(5, 101))
        data, _ = small_dataset(n=n, p=2, seed=int(rng.integers(1 << 30)), delta=0.3)
        yield theta, data


def test_projection_identities():
    for theta, data in projection_cases():
        S = dense_exp_cov(theta, data.sites.coords)
        Si = np.linalg.inv(S)
        for alpha in (model(), model(1, 2)):
            Xa = data.X[:, alpha.columns]
            M = projection_matrix(alpha, theta, data)
            A = projection_matrix(alpha, theta, data, complement=True)
            assert np.allclose(M @ M, M, atol=1e-8)
            assert np.allclose(M @ Xa, Xa, atol=1e-8)
            assert np.allclose(M.T @ Si @ M, Si @ M, atol=1e-8 * max(1, np.abs(Si).max()))
            assert np.allclose(A @ Xa, 0.0, atol=1e-8)


def test_projection_size_limit():
    data, _ = small_dataset(n=10, p=1)
    import geogic.likelihood as lk
    old = lk.DENSE_LIMIT
    lk.DENSE_LIMIT = 5
    try:
        with pytest.raises(ValueError):
            projection_matrix(model(1), THETA0, data)
    finally:
        lk.DENSE_LIMIT = old
