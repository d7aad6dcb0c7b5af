import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ksdbayes.errors import InvalidInputError, UnsupportedOperationError
from ksdbayes.models import (LIU_PRECISION, ContaminationSpec, Dataset, GaussianMixtureModel,
                             contaminate, make_egm_model, make_ising_model, make_kef_model,
                             make_liu_model, make_normal_location)

EXP_FAMILIES = [make_normal_location, make_liu_model, lambda: make_kef_model(8),
                lambda: make_egm_model(3)]


def _fd_x(f, x, h=1e-6):
    """Central differences of a row-wise scalar function, shape (n, d)."""
    out = np.empty(x.shape)
    for j in range(x.shape[1]):
        e = np.zeros(x.shape[1])
        e[j] = h
        out[:, j] = (f(x + e) - f(x - e)) / (2 * h)
    return out


def test_normal_location_fields():
    m = make_normal_location()
    assert m.d == 1 and m.k == 1 and m.natural
    assert m.score([[0.0]], 1.0)[0, 0] == 1.0
    assert m.t(np.array([[3.0]]))[0, 0] == 3.0
    assert m.grad_b(np.array([[3.0]]))[0, 0] == -3.0


def test_normal_location_density_ratio():
    m = make_normal_location()
    x = np.linspace(-3, 3, 7)[:, None]
    ratio = np.exp(m.log_density(x, 1.0) - m.log_density(x, 0.0))
    assert np.allclose(ratio, np.exp(x[:, 0] - 0.5), rtol=1e-14)


def test_liu_structure():
    m = make_liu_model()
    x = np.random.default_rng(40).normal(size=(6, 5))
    g = m.grad_t(x)
    assert not np.any(g[:, :3, :]) and not g[:, 3, 1].any() and not g[:, 4, 0].any()
    assert np.allclose(g[:, 3, 0], 1 / np.cosh(x[:, 3]) ** 2)
    assert np.allclose(m.grad_b(x), -x @ LIU_PRECISION, rtol=1e-14)
    assert LIU_PRECISION[0, 1] == -0.6 and np.all(LIU_PRECISION[0, 2:] == -0.2)
    assert np.all(np.diag(LIU_PRECISION) == 1.0)


def test_liu_sampler_only_at_zero():
    m = make_liu_model()
    rng = np.random.default_rng(41)
    x = m.sample(20_000, [0.0, 0.0], rng)
    assert np.allclose(np.cov(x, rowvar=False), np.linalg.inv(LIU_PRECISION), atol=0.05)
    with pytest.raises(UnsupportedOperationError):
        m.sample(5, [0.1, 0.0], rng)


def test_kef_basis_values():
    m = make_kef_model(5)
    t0 = m.t(np.array([[0.0]]))[0]
    assert t0[0] == 1.0 and t0[1] == 0.0
    assert m.t(np.array([[1.0]]))[0, 2] == pytest.approx(math.exp(-0.5) / math.sqrt(2), abs=1e-15)
    assert len(m.metadata["prior_variances"]) == 5
    assert m.metadata["prior_variances"][1] == pytest.approx(100 * 2 ** -1.1)


@pytest.mark.parametrize("p", [0, 31])
def test_kef_range(p):
    with pytest.raises(InvalidInputError):
        make_kef_model(p)


def test_egm_two_nodes():
    m = make_egm_model(2)
    assert m.k == 3
    x = np.array([[0.3, -0.7]])
    g = m.grad_t(x)[0]
    e1, e2 = np.exp(0.3), np.exp(-0.7)
    assert np.allclose(g, [[-e1, 0, -e1 * e2], [0, -e2, -e1 * e2]], rtol=1e-14)
    assert np.array_equal(m.grad_b(x), [[1.0, 1.0]])
    assert np.array_equal(m.score(x, np.zeros(3)), m.grad_b(x))
    with pytest.raises(InvalidInputError):
        make_egm_model(1)


@pytest.mark.parametrize("make", EXP_FAMILIES)
def test_grad_t_and_grad_b_match_finite_differences(make):
    m = make()
    x = 0.7 * np.random.default_rng(42).normal(size=(10, m.d))
    fd_b = _fd_x(m.b, x)
    assert np.allclose(m.grad_b(x), fd_b, rtol=1e-6, atol=1e-8)
    gt = m.grad_t(x)
    for c in range(m.k):
        fd = _fd_x(lambda z: m.t(z)[:, c], x)
        assert np.allclose(gt[:, :, c], fd, rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("make", EXP_FAMILIES)
def test_score_consistency(make):
    m = make()
    rng = np.random.default_rng(43)
    x = 0.7 * rng.normal(size=(10, m.d))
    theta = rng.normal(size=m.k)
    fd = _fd_x(lambda z: m.t(z) @ theta + m.b(z), x)
    s = m.score(x, theta)
    assert np.linalg.norm(s - fd) <= 1e-5 * np.linalg.norm(fd)


@pytest.mark.parametrize("make", EXP_FAMILIES + [lambda: GaussianMixtureModel(2.0)])
def test_theta_grad_score_matches_finite_differences(make):
    m = make()
    rng = np.random.default_rng(44)
    x = rng.normal(size=(8, m.d))
    p = getattr(m, "k", 1)
    theta = np.full(p, 0.4) if isinstance(m, GaussianMixtureModel) else rng.normal(size=p)
    g = m.theta_grad_score(x, theta)
    h = 1e-6
    for c in range(p):
        e = np.zeros(p)
        e[c] = h
        fd = (m.score(x, theta + e) - m.score(x, theta - e)) / (2 * h)
        assert np.allclose(g[:, :, c], fd, rtol=1e-6, atol=1e-7)


def test_natural_jacobian_is_identity():
    m = make_kef_model(4)
    assert np.array_equal(m.natural_jac(np.ones(4)), np.eye(4))


def test_gmm_density_and_score_agree():
    m = GaussianMixtureModel(2.0)
    x = np.linspace(-4, 4, 9)[:, None]
    fd = _fd_x(lambda z: m.log_density(z, 0.3), x)
    assert np.allclose(m.score(x, 0.3), fd, atol=1e-7)
    with pytest.raises(InvalidInputError):
        m.score(x, 1.0)


# ---------------------------------------------------------------- Ising

def test_ising_ratios_flip_formula():
    m = make_ising_model(3)
    rng = np.random.default_rng(45)
    x = rng.choice([-1.0, 1.0], size=(4, 9))
    theta = 1.7
    r = m.ratios(x, theta)
    for a in range(4):
        for i in range(9):
            y = x[a].copy()
            y[i] *= -1
            direct = math.exp(m.log_unnormalised(y[None], theta)[0]
                              - m.log_unnormalised(x[a][None], theta)[0]) - 1
            assert r[a, i] == pytest.approx(direct, rel=1e-12, abs=1e-14)
            y[i] *= -1
            assert np.array_equal(y, x[a])


def test_ising_uniform_limit():
    m = make_ising_model(2)
    x = np.ones((1, 4))
    assert np.max(np.abs(m.ratios(x, 1e12))) < 1e-11


def test_ising_rejects_bad_inputs():
    m = make_ising_model(2)
    with pytest.raises(InvalidInputError):
        m.ratios(np.ones((1, 4)), 0.0)
    with pytest.raises(InvalidInputError):
        m.ratios(np.zeros((1, 4)), 1.0)
    with pytest.raises(InvalidInputError):
        make_ising_model(1)


def test_ising_gibbs_matches_enumeration():
    m = make_ising_model(2)
    theta = 2.0
    states, prob = m.enumerate_states(theta)
    n = 20_000
    draws = m.gibbs_sample(n, theta, np.random.default_rng(46), burn_in=200, thin=2)
    codes = (((draws + 1) / 2).astype(int) * (1 << np.arange(4))).sum(axis=1)
    freq = np.bincount(codes, minlength=16) / n
    se = np.sqrt(prob * (1 - prob) / n)
    assert np.all(np.abs(freq - prob) <= 3 * se)


def test_samplers_deterministic():
    rng_a, rng_b = np.random.default_rng(47), np.random.default_rng(47)
    m = make_ising_model(3)
    assert np.array_equal(m.gibbs_sample(5, 2.0, rng_a, burn_in=10),
                          m.gibbs_sample(5, 2.0, rng_b, burn_in=10))
    g = GaussianMixtureModel(3.0)
    assert np.array_equal(g.sample(10, 0.4, np.random.default_rng(1)),
                          g.sample(10, 0.4, np.random.default_rng(1)))


# ---------------------------------------------------------------- contamination

def test_contaminate_modes():
    x = np.arange(10.0)[:, None]
    same = contaminate(x, ContaminationSpec(0.0, "replace-draw", 5.0), 0)
    assert np.array_equal(same.x, x) and not same.contaminated.any()
    allfixed = contaminate(x, ContaminationSpec(1.0, "replace-fixed", 7.0), 0)
    assert np.all(allfixed.x == 7.0) and allfixed.contaminated.all()
    shifted = contaminate(x, ContaminationSpec(1.0, "shift", 10.0), 0)
    assert np.array_equal(shifted.x, x + 10.0)


def test_contaminate_count_binomial():
    ds = contaminate(np.zeros((10_000, 1)), ContaminationSpec(0.1, "replace-draw", 5.0), 48)
    assert abs(ds.contaminated.sum() - 1000) <= 3 * math.sqrt(10_000 * 0.1 * 0.9)
    assert isinstance(ds, Dataset) and ds.n == 10_000 and ds.d == 1


@pytest.mark.parametrize("eps,mode", [(-0.1, "shift"), (1.1, "shift"), (0.1, "other")])
def test_contamination_spec_validation(eps, mode):
    with pytest.raises(InvalidInputError):
        ContaminationSpec(eps, mode, 1.0)


@settings(max_examples=30)
@given(st.floats(0, 1), st.integers(0, 2 ** 31))
def test_contaminate_only_touches_masked_rows(eps, seed):
    x = np.random.default_rng(1).normal(size=(50, 2))
    ds = contaminate(x, ContaminationSpec(eps, "replace-fixed", [9.0, 9.0]), seed)
    assert np.array_equal(ds.x[~ds.contaminated], x[~ds.contaminated])
    assert np.all(ds.x[ds.contaminated] == 9.0)
