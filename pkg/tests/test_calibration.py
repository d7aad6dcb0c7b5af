import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ksdbayes.calibration import (beta_from_matrices, beta_select, minimum_ksd, s_n)
from ksdbayes.experiments import fit_normal_location, normal_location_data
from ksdbayes.kernel import constant_kernel, default_kernel, liu_weight, rational_weight
from ksdbayes.ksd import ksd_grad_theta
from ksdbayes.models import (ExponentialFamily, GaussianMixtureModel, ScoreModel,
                             make_ising_model, make_liu_model, make_normal_location)
from ksdbayes.stein import HammingKernel, discrete_ssk, langevin_ssk

NL = make_normal_location()


class _ScoreOnly(ScoreModel):
    """Hides the exponential-family structure so the iterative path is used."""

    def __init__(self, inner):
        self.inner, self.d, self.p = inner, inner.d, inner.k

    def score(self, x, theta):
        return self.inner.score(x, theta)

    def theta_grad_score(self, x, theta):
        return self.inner.theta_grad_score(x, theta)


def test_constant_kernel_minimiser_is_sample_mean():
    x = np.random.default_rng(60).normal(2.0, 1.0, size=(25, 1))
    res = minimum_ksd(NL, constant_kernel(1), x)
    assert res.method == "closed-form" and res.theta[0] == pytest.approx(x.mean(), rel=1e-13)


def test_diagonal_quadratic_minimiser():
    # K = I, grad t = I and constant grad b give Lambda = I and nu = 2 grad b
    model = ExponentialFamily("lin", 2, 2, t=lambda x: x, grad_t=lambda x: np.broadcast_to(
        np.eye(2), (x.shape[0], 2, 2)), b=lambda x: -x[:, 0] + 2 * x[:, 1],
        grad_b=lambda x: np.tile([-1.0, 2.0], (x.shape[0], 1)))
    res = minimum_ksd(model, constant_kernel(2), np.zeros((3, 2)))
    assert np.allclose(res.theta, [1.0, -2.0], atol=1e-15)


def test_liu_minimiser_near_truth():
    rng = np.random.default_rng(61)
    model = make_liu_model()
    x = model.sample(200, [0, 0], rng)
    res = minimum_ksd(model, default_kernel(x, liu_weight(5)), x)
    assert np.max(np.abs(res.theta)) < 0.3


def test_closed_form_and_iterative_agree():
    rng = np.random.default_rng(62)
    model = make_liu_model()
    x = model.sample(100, [0, 0], rng)
    K = default_kernel(x, liu_weight(5))
    a = minimum_ksd(model, K, x)
    b = minimum_ksd(_ScoreOnly(model), K, x, init=[0.5, 0.5])
    assert b.method == "l-bfgs-b" and b.converged and not b.flags
    assert np.allclose(a.theta, b.theta, atol=1e-6)


def test_singular_lambda_falls_back_with_flag():
    # constant kernel on a 2-parameter family whose grad t has rank one
    model = ExponentialFamily("rank1", 1, 2, t=lambda x: np.hstack([x, 2 * x]),
                              grad_t=lambda x: np.tile([[[1.0, 2.0]]], (x.shape[0], 1, 1)),
                              b=lambda x: -0.5 * x[:, 0] ** 2, grad_b=lambda x: -x)
    x = np.random.default_rng(63).normal(size=(10, 1))
    res = minimum_ksd(model, constant_kernel(1), x, init=[0.0, 0.0])
    assert "lambda-singular-ridge" in res.flags
    assert res.theta[0] + 2 * res.theta[1] == pytest.approx(x.mean(), abs=1e-6)


def test_non_convergence_reported():
    model = GaussianMixtureModel(2.0)
    x = model.sample(50, 0.4, np.random.default_rng(64))
    res = minimum_ksd(model, default_kernel(x), x, init=[0.3], bounds=[(0.05, 0.95)], maxiter=1)
    assert not res.converged and "not-converged" in res.flags and res.grad_norm > 0


def test_restarts_are_seeded():
    model = GaussianMixtureModel(2.0)
    x = model.sample(60, 0.3, np.random.default_rng(65))
    K = default_kernel(x)
    kw = dict(bounds=[(0.02, 0.98)], prior_sampler=lambda r: r.uniform(0.1, 0.9, 1))
    a = minimum_ksd(model, K, x, seed=3, **kw)
    b = minimum_ksd(model, K, x, seed=3, **kw)
    assert np.array_equal(a.theta, b.theta) and a.converged


# ---------------------------------------------------------------- s_n

def test_s_n_at_zero_is_linear_term():
    rng = np.random.default_rng(66)
    x = rng.normal(size=(15, 1))
    K = default_kernel(x)
    pts = rng.normal(size=(4, 1))
    s0 = s_n(pts, 0.0, NL, K, x)
    s1 = s_n(pts, 1.0, NL, K, x)
    s2 = s_n(pts, 2.0, NL, K, x)
    assert np.allclose(s2 - s1, s1 - s0, rtol=1e-10)  # affine in theta
    assert np.allclose(s1 - s0 + s0, s1)


@pytest.mark.parametrize("case", ["liu", "gmm", "ising"])
def test_s_n_average_is_gradient(case):
    rng = np.random.default_rng(67)
    if case == "liu":
        model, x, theta = make_liu_model(), rng.normal(size=(30, 5)), rng.normal(size=2)
        K = default_kernel(x, liu_weight(5))
    elif case == "gmm":
        model = GaussianMixtureModel(1.5)
        x, theta = model.sample(30, 0.4, rng), np.array([0.4])
        K = default_kernel(x, rational_weight())
    else:
        model = make_ising_model(3)
        x, theta = rng.choice([-1.0, 1.0], size=(30, 9)), np.array([2.0])
        K = HammingKernel(9)
    avg = s_n(x, theta, model, K, x, block=7).mean(axis=0)
    assert np.allclose(avg, ksd_grad_theta(model, K, x, theta), rtol=1e-10, atol=1e-14)


def test_s_n_matches_finite_differences_of_pairs():
    rng = np.random.default_rng(68)
    model = make_liu_model()
    data = rng.normal(size=(3, 5))
    K = default_kernel(data, liu_weight(5))
    x = rng.normal(size=5)
    theta = rng.normal(size=2)

    def mean_ssk(th):
        sx = model.score(x[None], th)[0]
        return np.mean([langevin_ssk(K, sx, model.score(d[None], th)[0], x, d) for d in data])
    h = 1e-6
    fd = np.array([(mean_ssk(theta + h * e) - mean_ssk(theta - h * e)) / (2 * h)
                   for e in np.eye(2)])
    assert np.allclose(s_n(x[None], theta, model, K, data)[0], fd, rtol=1e-6, atol=1e-8)


def test_s_n_discrete_matches_finite_differences():
    rng = np.random.default_rng(69)
    model = make_ising_model(2)
    data = rng.choice([-1.0, 1.0], size=(4, 4))
    K = HammingKernel(4)
    x = data[0]

    def mean_ssk(t):
        rx = model.ratios(x[None], t)[0]
        return np.mean([discrete_ssk(K, rx, model.ratios(d[None], t)[0], x, d) for d in data])
    h = 1e-6
    fd = (mean_ssk(1.5 + h) - mean_ssk(1.5 - h)) / (2 * h)
    assert s_n(x[None], 1.5, model, K, data)[0, 0] == pytest.approx(fd, rel=1e-6)


# ---------------------------------------------------------------- beta

@pytest.mark.parametrize("H,J,beta_n,beta", [(2.0, 2.0, 1.0, 1.0), (2.0, 8.0, 0.25, 0.25),
                                             (2.0, 0.5, 4.0, 1.0)])
def test_beta_arithmetic(H, J, beta_n, beta):
    assert beta_from_matrices([[H]], [[J]]) == pytest.approx((beta_n, beta))


@given(st.floats(0.01, 100), st.floats(0.01, 100), st.floats(1.01, 10))
def test_beta_monotone_in_j(H, J, factor):
    b1 = beta_from_matrices([[H]], [[J]])
    b2 = beta_from_matrices([[H]], [[J * factor]])
    assert b2[0] < b1[0] and b2[1] <= b1[1] <= 1.0


def test_beta_select_result_contract():
    x, _ = normal_location_data(100, 0.1, 10.0, 70)
    K = default_kernel(x)
    cal = beta_select(NL, K, x)
    assert 0 < cal.beta <= 1 and cal.beta == min(1.0, cal.beta_n)
    assert np.array_equal(cal.H_n, cal.H_n.T)
    assert np.linalg.eigvalsh(cal.H_n).min() >= -1e-8
    d = json.loads(cal.to_json())
    assert set(d) == {"theta_n", "H_n", "J_n", "beta_n", "beta", "flags"}


def test_beta_select_flags_singular_j():
    # a single repeated datum with the constant kernel makes S_n identically zero
    x = np.full((5, 1), 0.3)
    cal = beta_select(NL, constant_kernel(1), x)
    assert "J-ridge" in cal.flags and np.isfinite(cal.beta_n)


def test_well_specified_median_beta_is_one():
    betas = [fit_normal_location(normal_location_data(100, 0.0, 0.0, [71, r])[0])[1].beta
             for r in range(50)]
    assert np.median(betas) == 1.0


def test_beta_nonincreasing_in_contamination():
    means = []
    for eps in (0.1, 0.2):
        betas = [fit_normal_location(normal_location_data(500, eps, 10.0, [72, r])[0])[1].beta
                 for r in range(20)]
        means.append(np.mean(betas))
    assert means[1] <= means[0]
