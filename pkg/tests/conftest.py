import numpy as np
import pytest

from geogic.covariance import CovParams
from geogic.datagen import Dataset, TruthSpec, simulate_dataset
from geogic.design import RegressorSpec, gen_regressors, sites_1d

THETA0 = CovParams(0.5, 0.5, 1.0)


def dense_exp_cov(theta, coords):
    """Reference covariance built straight from the formula."""
    c = np.asarray(coords, float)
    if c.ndim == 1:
        d = np.abs(c[:, None] - c[None, :])
    else:
        d = np.abs(c[:, None, :] - c[None, :, :]).sum(axis=-1)
    S = theta.sigma2 * np.exp(-theta.kappa * d)
    return S + theta.v2 * np.eye(len(c))


def small_dataset(n=30, p=2, seed=0, delta=0.0, theta=THETA0, beta=None):
    sites = sites_1d(n, delta)
    specs = (RegressorSpec("white_noise", v2=1.0),) * p
    X = gen_regressors(specs, sites, (seed,))
    beta = beta if beta is not None else (1.0,) * (p + 1)
    truth = TruthSpec(beta, theta)
    return simulate_dataset(truth, X, sites, (seed,)), truth


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        import test_acceptance
    except ImportError:
        return
    if test_acceptance.LINES:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.LINES:
            terminalreporter.write_line(line)
