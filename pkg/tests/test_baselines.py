import numpy as np
import pytest
from scipy import integrate

from ksdbayes.baselines import (baseline_mmd_bayes, baseline_power_posterior, liu_log_normaliser,
                                liu_standard_bayes, mmd_squared, power_posterior_beta,
                                standard_bayes_normal)
from ksdbayes.models import LIU_PRECISION, make_liu_model


def test_standard_bayes_mean_and_variance():
    x = np.random.default_rng(110).normal(1.0, 1.0, size=(40, 1))
    table = standard_bayes_normal(x)
    assert table.mean == pytest.approx(x.sum() / 41, rel=1e-14)
    assert table.var == pytest.approx(1 / 41, rel=1e-14)
    assert np.trapezoid(table.density, table.grid) == pytest.approx(1.0, abs=1e-8)


def test_power_beta_is_one_at_model_moments():
    # mean(x) = 1 and mean(x^2) = 2 are the N(1, 1) moments
    x = np.array([[1.0 - 1.0], [1.0 + 1.0]])
    assert power_posterior_beta(x) == pytest.approx(1.0, abs=1e-15)


def test_power_posterior_formula():
    x = np.random.default_rng(111).normal(0.5, 2.0, size=(30, 1))
    beta = np.sqrt((2 + x.mean() ** 2) / (1 + np.mean(x ** 2)))
    table = baseline_power_posterior(x)
    assert table.beta == pytest.approx(beta, rel=1e-14)
    assert table.mean == pytest.approx(beta * 30 * x.mean() / (1 + beta * 30), rel=1e-13)
    assert table.var == pytest.approx(1 / (1 + beta * 30), rel=1e-13)


def _mmd_oracle(theta, x):
    """Independent MMD^2 by numerical integration against the N(theta, 1) density."""
    phi = lambda u: np.exp(-0.5 * (u - theta) ** 2) / np.sqrt(2 * np.pi)
    model, _ = integrate.dblquad(lambda u, v: np.exp(-(u - v) ** 2) * phi(u) * phi(v),
                                 theta - 12, theta + 12, theta - 12, theta + 12, epsabs=1e-12)
    cross = np.mean([integrate.quad(lambda u: np.exp(-(u - xi) ** 2) * phi(u),
                                    -np.inf, np.inf, epsabs=1e-13)[0] for xi in x])
    data = np.mean(np.exp(-(x[:, None] - x[None]) ** 2))
    return model - 2 * cross + data


@pytest.mark.parametrize("theta", [-1.0, 0.0, 0.7, 3.0])
def test_mmd_squared_matches_integration(theta):
    x = np.random.default_rng(112).normal(size=7)
    assert mmd_squared(theta, x[:, None]) == pytest.approx(_mmd_oracle(theta, x), abs=1e-9)


def test_mmd_single_point_value():
    # model term 1/sqrt(5), cross term 1/sqrt(3) at theta = x, data term 1
    expected = 1 / np.sqrt(5) - 2 / np.sqrt(3) + 1
    assert mmd_squared(0.0, [[0.0]]) == pytest.approx(expected, abs=1e-14)
    assert expected == pytest.approx(0.2925130571, abs=1e-10)


def test_mmd_bayes_symmetric_about_sample_mean():
    half = np.random.default_rng(113).normal(size=10)
    x = np.r_[half, -half][:, None]
    table = baseline_mmd_bayes(x, np.linspace(-4, 4, 801))
    assert abs(table.mean) < 1e-10
    assert np.allclose(table.density, table.density[::-1], rtol=1e-10, atol=1e-14)


def test_liu_normaliser_matches_monte_carlo():
    rng = np.random.default_rng(114)
    z = rng.multivariate_normal(np.zeros(5), np.linalg.inv(LIU_PRECISION), size=400_000)
    theta = np.array([0.8, -0.5])
    vals = np.exp(np.tanh(z[:, 3:5]) @ theta)
    se = vals.std() / np.sqrt(vals.size) / vals.mean()
    assert liu_log_normaliser(theta) == pytest.approx(np.log(vals.mean()), abs=4 * se)
    assert liu_log_normaliser([0.0, 0.0]) == pytest.approx(0.0, abs=1e-14)


def test_liu_standard_bayes_concentrates_near_truth():
    x = make_liu_model().sample(300, [0.0, 0.0], np.random.default_rng(115))
    q = liu_standard_bayes(x, resolution=61)
    assert np.all(np.abs(q.mean) < 0.5) and np.all(np.diag(q.cov) > 0)
