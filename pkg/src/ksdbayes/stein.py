"""Stein kernels: the Langevin operator applied twice to a matrix kernel, and the
flip-difference analogue on {-1, +1}^d.

Discrete convention: with r(x)_i = p(x^{(i)})/p(x) - 1 and
[div^- h(x)]_i = sum_j h_ij(x^{(j)}) - h_ij(x), the operator
S h = r . h - div^- h satisfies E_p[S h] = 0 for every h, since flipping a
coordinate is a bijection of the state space. The Stein kernel is therefore

    r(x).K r(x') + tr(div^-_x div^-_{x'} K) - r(x).div^-_{x'}K - div^-_x K.r(x').
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidInputError
from .kernel import KernelPieces, WeightedKernel, kernel_pieces
from .models import as_data

__all__ = [
    "langevin_ssk",
    "langevin_ssk_from_pieces",
    "HammingKernel",
    "indicator_weight",
    "discrete_pieces",
    "discrete_ssk",
    "discrete_ssk_from_pieces",
    "stein_identity_mc",
    "stein_identity_exact",
]


def langevin_ssk_from_pieces(pc: KernelPieces, sx, sy) -> np.ndarray:
    """Stein kernel for every pair in ``pc`` given scores at both sides."""
    ux = np.einsum("...kl,...k->...l", pc.mx, sx)
    uy = np.einsum("...kl,...k->...l", pc.my, sy)
    return (pc.phi * np.sum(ux * uy, axis=-1) + pc.trace
            + np.sum(sx * pc.div_xp, axis=-1) + np.sum(sy * pc.div_x, axis=-1))


def langevin_ssk(K: WeightedKernel, s_x, s_xp, x, xp) -> float:
    """s(x).K(x,x')s(x') + div_x div_x' K + s(x).div_x' K + s(x').div_x K."""
    d = K.d
    arrays = [np.atleast_1d(np.asarray(a, dtype=float)) for a in (s_x, s_xp, x, xp)]
    if any(a.shape != (d,) for a in arrays):
        raise InvalidInputError("dimension mismatch between scores, points and kernel")
    s_x, s_xp, x, xp = arrays
    return float(langevin_ssk_from_pieces(kernel_pieces(K, x, xp), s_x, s_xp))


def indicator_weight(threshold_fraction: float = 0.9) -> Callable:
    """m(x) = 1{|sum_i x_i| <= threshold_fraction * d}."""
    def m(x):
        x = np.asarray(x, dtype=float)
        return (np.abs(x.sum(axis=-1)) <= threshold_fraction * x.shape[-1]).astype(float)
    m.tag = "indicator"
    m.threshold_fraction = threshold_fraction
    return m


@dataclass(frozen=True)
class HammingKernel:
    """K(x, x') = m(x) m(x') exp(-(1/2d) sum_i |x_i - x'_i|) I_d on {-1, +1}^d.

    ``weight`` is a scalar function m of a state (None means m == 1).
    """

    d: int
    weight: Callable | None = None

    @property
    def tag(self) -> str:
        return "identity" if self.weight is None else getattr(self.weight, "tag", "custom")

    def m(self, x):
        x = np.asarray(x, dtype=float)
        if self.weight is None:
            return np.ones(x.shape[:-1])
        return np.asarray(self.weight(x), dtype=float)

    def m_flipped(self, x):
        """m evaluated at each single-coordinate flip; shape (..., d)."""
        x = np.asarray(x, dtype=float)
        if self.weight is None:
            return np.ones(x.shape)
        flips = np.repeat(x[..., None, :], self.d, axis=-2)
        idx = np.arange(self.d)
        flips[..., idx, idx] *= -1.0
        return np.asarray(self.weight(flips), dtype=float)

    def scalar(self, x, xp):
        x = np.asarray(x, dtype=float)
        xp = np.asarray(xp, dtype=float)
        return np.exp(-np.sum(np.abs(x - xp), axis=-1) / (2.0 * self.d))

    def __call__(self, x, xp):
        return self.m(x) * self.m(xp) * self.scalar(x, xp) * np.eye(self.d)


@dataclass
class DiscretePieces:
    kval: np.ndarray    # m(x) m(x') k(x, x')
    div_xp: np.ndarray  # [div^-_{x'} K]_i
    div_x: np.ndarray   # [div^-_x K]_j
    trace: np.ndarray   # sum_i second flip difference of K_ii


def _check_binary(x, d):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != d or not np.all(np.abs(x) == 1.0):
        raise InvalidInputError("coordinates must lie in {-1, +1}")
    return x


def discrete_pieces(K: HammingKernel, x, y) -> DiscretePieces:
    """Broadcasting pair evaluation, as for :func:`kernel_pieces`."""
    d = K.d
    x = _check_binary(x, d)
    y = _check_binary(y, d)
    agree = x * y  # +1 where coordinates agree; flipping either side changes Hamming by +agree
    ham = 0.5 * np.sum(np.abs(x - y), axis=-1)
    k = np.exp(-ham / d)
    k_flip = np.exp(-(ham[..., None] + agree) / d)
    mx, my = K.m(x), K.m(y)
    mfx, mfy = K.m_flipped(x), K.m_flipped(y)
    kval = mx * my * k
    div_xp = mx[..., None] * (mfy * k_flip - (my * k)[..., None])
    div_x = my[..., None] * (mfx * k_flip - (mx * k)[..., None])
    trace = np.sum(mfx * mfy * k[..., None]
                   - mfx * my[..., None] * k_flip
                   - mx[..., None] * mfy * k_flip, axis=-1) + d * kval
    return DiscretePieces(kval, div_xp, div_x, trace)


def discrete_ssk_from_pieces(pc: DiscretePieces, rx, ry) -> np.ndarray:
    return (pc.kval * np.sum(rx * ry, axis=-1) + pc.trace
            - np.sum(rx * pc.div_xp, axis=-1) - np.sum(ry * pc.div_x, axis=-1))


def discrete_ssk(K: HammingKernel, r_x, r_xp, x, xp) -> float:
    r_x = np.asarray(r_x, dtype=float)
    r_xp = np.asarray(r_xp, dtype=float)
    return float(discrete_ssk_from_pieces(discrete_pieces(K, x, xp), r_x, r_xp))


def stein_identity_mc(model, K, m: int, seed, theta=0.0):
    """Monte Carlo estimate of E[SSK(X, X')] for independent X, X' ~ P_theta.

    Returns ``(estimate, standard_error)``; the estimate should vanish.
    """
    if m < 2:
        raise InvalidInputError("need m >= 2 samples")
    rng = np.random.default_rng(seed)
    if getattr(model, "kind", "continuous") == "discrete":
        x = model.gibbs_sample(m, theta, rng)
        xp = model.gibbs_sample(m, theta, rng)
        vals = discrete_ssk_from_pieces(discrete_pieces(K, x, xp),
                                        model.ratios(x, theta), model.ratios(xp, theta))
    else:
        x = as_data(model.sample(m, theta, rng))
        xp = as_data(model.sample(m, theta, rng))
        vals = langevin_ssk_from_pieces(kernel_pieces(K, x, xp),
                                        model.score(x, theta), model.score(xp, theta))
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(m))


def stein_identity_exact(model, K: HammingKernel, theta) -> float:
    """sum_{x, x'} p(x) p(x') SSK(x, x') by enumeration of every state."""
    states, prob = model.enumerate_states(theta)
    r = model.ratios(states, theta)
    pc = discrete_pieces(K, states[:, None, :], states[None, :, :])
    gram = discrete_ssk_from_pieces(pc, r[:, None, :], r[None, :, :])
    return float(prob @ gram @ prob)
