import numpy as np
import pytest

from stdeff import ModelSpec, TrialDataset, expit

DGP_BETA_X = np.array([2.5, 1.8, -2.8, -2.1, 2.0, -2.0])


def draw_dgp_dataset(n, beta0, beta_a, seed, pi0=0.5):
    """Sample one dataset from the simulation DGP shape (4 uniform + 2 binary)."""
    rng = np.random.default_rng(seed)
    x_cont = rng.random((n, 4))
    x_bin = (rng.random((n, 2)) < 0.5).astype(float)
    x = np.hstack([x_cont, x_bin])
    a = (rng.random(n) < pi0).astype(float)
    y = (rng.random(n) < expit(beta0 + beta_a * a + x @ DGP_BETA_X)).astype(float)
    return TrialDataset(covariates=x, treatment=a, outcome=y, pi0=pi0)


def draw_tame_dataset(n, seed, n_cov=2, pi0=0.5):
    """A well-behaved dataset with moderate event rates, no separation risk."""
    rng = np.random.default_rng(seed)
    x = rng.normal(scale=0.8, size=(n, n_cov))
    a = np.zeros(n)
    a[: n // 2] = 1.0
    rng.shuffle(a)
    y = (rng.random(n) < expit(0.2 + 0.3 * a + x @ np.linspace(0.5, -0.5, n_cov))).astype(float)
    if y.min() == y.max():  # pragma: no cover - seeds below avoid this
        y[0] = 1.0 - y[0]
    return TrialDataset(covariates=x, treatment=a, outcome=y, pi0=pi0)


@pytest.fixture
def tame_data():
    return draw_tame_dataset(80, seed=20260811)


@pytest.fixture
def tame_spec(tame_data):
    return ModelSpec.main_terms(tame_data.n_covariates)
