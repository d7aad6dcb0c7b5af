import itertools

import numpy as np
import pytest

from ksdbayes.errors import InvalidInputError
from ksdbayes.kernel import (ImqBase, WeightedKernel, constant_kernel, default_kernel,
                             identity_weight, kernel_eval, liu_weight, rational_weight)
from ksdbayes.models import make_ising_model, make_liu_model, make_normal_location
from ksdbayes.stein import (HammingKernel, discrete_ssk, indicator_weight, langevin_ssk,
                            stein_identity_exact, stein_identity_mc)


def test_langevin_constant_kernel_hand_value():
    model = make_normal_location()
    K = constant_kernel(1)
    s1 = model.score([[1.0]], 0.0)[0]
    s2 = model.score([[2.0]], 0.0)[0]
    assert langevin_ssk(K, s1, s2, 1.0, 2.0) == pytest.approx(2.0, abs=1e-15)


@pytest.mark.parametrize("x,s", [(0.0, 3.0), (1.5, -0.2), (-4.0, 0.0)])
def test_langevin_diagonal_imq(x, s):
    K = WeightedKernel(ImqBase(1.0, 0.5), identity_weight(1))
    assert langevin_ssk(K, s, s, x, x) == pytest.approx(s * s + 1.0, abs=1e-14)


def _fd_ssk(K, sx, sy, x, y, h=1e-5):
    """Stein kernel assembled from kernel_eval and numerical divergences only."""
    d = K.d
    val = sx @ kernel_eval(K, x, y) @ sy
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        dxp = (kernel_eval(K, x, y + e) - kernel_eval(K, x, y - e)) / (2 * h)
        dx = (kernel_eval(K, x + e, y) - kernel_eval(K, x - e, y)) / (2 * h)
        val += sx @ dxp[:, j] + dx[j, :] @ sy
        for i in range(d):
            f = np.zeros(d)
            f[i] = h
            mixed = (kernel_eval(K, x + f, y + e) - kernel_eval(K, x + f, y - e)
                     - kernel_eval(K, x - f, y + e) + kernel_eval(K, x - f, y - e)) / (4 * h * h)
            val += mixed[i, j]
    return val


@pytest.mark.parametrize("K", [WeightedKernel(ImqBase(0.9, 0.5, d=5), liu_weight(5)),
                               WeightedKernel(ImqBase(1.2, 0.3, d=2), rational_weight(d=2))])
def test_langevin_matches_finite_difference_assembly(K):
    rng = np.random.default_rng(10)
    for _ in range(10):
        x, y = rng.normal(size=K.d), rng.normal(size=K.d)
        sx, sy = rng.normal(size=K.d), rng.normal(size=K.d)
        ref = _fd_ssk(K, sx, sy, x, y)
        assert abs(langevin_ssk(K, sx, sy, x, y) - ref) <= 1e-4 * max(1.0, abs(ref))


def test_langevin_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        langevin_ssk(constant_kernel(2), [1.0], [1.0, 2.0], [0.0, 0.0], [0.0, 0.0])


def test_langevin_symmetry_and_cauchy_schwarz():
    model = make_liu_model()
    K = WeightedKernel(ImqBase(1.0, 0.5, d=5), liu_weight(5))
    rng = np.random.default_rng(11)
    theta = np.array([0.5, -1.0])
    for _ in range(100):
        x, y = rng.normal(size=5), rng.normal(size=5)
        sx, sy = model.score(x[None], theta)[0], model.score(y[None], theta)[0]
        a = langevin_ssk(K, sx, sy, x, y)
        assert a == pytest.approx(langevin_ssk(K, sy, sx, y, x), rel=1e-12, abs=1e-12)
        kxx = langevin_ssk(K, sx, sx, x, x)
        kyy = langevin_ssk(K, sy, sy, y, y)
        assert kxx >= 0 and kyy >= 0
        assert abs(a) <= np.sqrt(kxx * kyy) * (1 + 1e-12)


# ---------------------------------------------------------------- discrete

def test_discrete_single_site_uniform_hand_value():
    K = HammingKernel(1)
    assert discrete_ssk(K, [0.0], [0.0], [1.0], [1.0]) == pytest.approx(2 * (1 - np.exp(-1)),
                                                                          abs=1e-15)


def _flip(x, i):
    y = np.array(x, dtype=float)
    y[i] *= -1
    return y


@pytest.mark.parametrize("d", [2, 3, 4])
def test_discrete_trace_term_matches_brute_force(d):
    K = HammingKernel(d)
    zero = np.zeros(d)
    for x in itertools.product([-1.0, 1.0], repeat=d):
        x = np.array(x)
        xp = _flip(x, 0)
        brute = 0.0
        for i in range(d):
            k = lambda a, b: K(a, b)[i, i]
            brute += (k(_flip(x, i), _flip(xp, i)) - k(_flip(x, i), xp)
                      - k(x, _flip(xp, i)) + k(x, xp))
        assert discrete_ssk(K, zero, zero, x, xp) == pytest.approx(brute, abs=1e-14)


def test_indicator_weight_zero_removes_terms_at_x():
    d = 4
    K = HammingKernel(d, indicator_weight(0.5))
    x = np.ones(d)  # |sum| = 4 > 2, so m(x) = 0
    xp = np.array([1.0, -1.0, 1.0, -1.0])
    rng = np.random.default_rng(12)
    r_x, r_xp = rng.normal(size=d), rng.normal(size=d)
    # with m(x) = 0 the r(x) terms vanish, so changing r(x) has no effect
    assert discrete_ssk(K, r_x, r_xp, x, xp) == discrete_ssk(K, 5 * r_x, r_xp, x, xp)


def test_discrete_rejects_non_binary():
    with pytest.raises(InvalidInputError):
        discrete_ssk(HammingKernel(2), [0, 0], [0, 0], [1.0, 0.5], [1.0, 1.0])


def test_discrete_symmetry_and_nonnegative_diagonal():
    model = make_ising_model(2)
    for K in (HammingKernel(4), HammingKernel(4, indicator_weight(0.5))):
        states, _ = model.enumerate_states(1.3)
        r = model.ratios(states, 1.3)
        for a in range(16):
            assert discrete_ssk(K, r[a], r[a], states[a], states[a]) >= 0
            for b in range(16):
                v = discrete_ssk(K, r[a], r[b], states[a], states[b])
                assert v == pytest.approx(discrete_ssk(K, r[b], r[a], states[b], states[a]),
                                          abs=1e-13)


# ---------------------------------------------------------------- Stein identity

def test_stein_identity_mc_normal():
    model = make_normal_location()
    ref = np.random.default_rng(13).standard_normal((100, 1))
    est, se = stein_identity_mc(model, default_kernel(ref), 2000, 14)
    assert abs(est) <= 4 * se


def test_stein_identity_mc_rejects_small_m():
    with pytest.raises(InvalidInputError):
        stein_identity_mc(make_normal_location(), constant_kernel(1), 1, 0)


@pytest.mark.parametrize("theta", [0.3, 1.0, 5.0])
@pytest.mark.parametrize("weight", [None, indicator_weight(0.5)])
def test_stein_identity_exact_ising(theta, weight):
    assert abs(stein_identity_exact(make_ising_model(2), HammingKernel(4, weight), theta)) < 1e-10
