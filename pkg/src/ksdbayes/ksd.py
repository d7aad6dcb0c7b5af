"""Squared kernel Stein discrepancy between a model and an empirical measure.

KSD^2(P_theta || P_n) = (1/n^2) sum_{i,j} SSK(x_i, x_j), a V-statistic with
the diagonal included. Everything except the n score vectors is independent
of theta, so it is computed once and kept in a :class:`GramCache`.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import CacheMismatchError, InvalidInputError
from .kernel import WeightedKernel, kernel_pieces
from .models import ExponentialFamily, as_data
from .stein import (HammingKernel, discrete_pieces, discrete_ssk_from_pieces,
                    langevin_ssk_from_pieces)

__all__ = [
    "KsdValue",
    "GramCache",
    "build_gram_cache",
    "ksd_vstat",
    "ksd_naive",
    "ksd_rank_one",
    "ksd_minibatch",
    "ksd_grad_theta",
    "ksd_hess_theta",
    "tree_sum",
]

BLOCK_ROWS = 128


@dataclass(frozen=True)
class KsdValue:
    value: float
    up_to_constant: bool = False

    def __float__(self):
        return self.value


def tree_sum(values) -> float:
    """Pairwise reduction with a fixed tree, independent of how values were produced."""
    vals = [float(v) for v in values]
    if not vals:
        return 0.0
    while len(vals) > 1:
        nxt = [vals[i] + vals[i + 1] for i in range(0, len(vals) - 1, 2)]
        if len(vals) % 2:
            nxt.append(vals[-1])
        vals = nxt
    return vals[0]


def _blocks(n):
    return [slice(i, min(i + BLOCK_ROWS, n)) for i in range(0, n, BLOCK_ROWS)]


def _map_blocks(fn, n, threads):
    blocks = _blocks(n)
    if threads and threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, blocks))
    return [fn(b) for b in blocks]


class GramCache:
    """theta-independent Stein-kernel pieces for every pair of one dataset.

    ``phi`` holds the scalar kernel part (the IMQ value for Langevin kernels,
    m(x) m(x') k(x, x') for the Hamming kernel), ``mats`` the weights M(x_i),
    ``div_xp[i, j]`` the divergence in the second argument and ``trace[i, j]``
    the mixed second-order term. The divergence in the first argument is
    ``div_xp`` with its pair axes swapped, so it is not stored separately.
    """

    def __init__(self, kernel, x, kind, phi, mats, div_xp, trace):
        self.kernel = kernel
        self.kind = kind
        self.x = np.array(x, dtype=float)
        self.phi = phi
        self.mats = mats
        self.div_xp = div_xp
        self.trace = trace
        self.row_xp = div_xp.sum(axis=1)
        self.trace_total = tree_sum(trace[b].sum() for b in _blocks(self.n))
        for a in (self.x, self.phi, self.div_xp, self.trace, self.row_xp):
            a.setflags(write=False)
        if mats is not None:
            mats.setflags(write=False)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def div_x(self) -> np.ndarray:
        return np.swapaxes(self.div_xp, 0, 1)

    def matches(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return x.shape == self.x.shape and np.array_equal(x, self.x)

    def pair(self, i: int, j: int):
        """Reconstruct (K(x_i, x_j), div_x', div_x, trace) for one pair."""
        if self.kind == "discrete":
            kmat = self.phi[i, j] * np.eye(self.d)
        else:
            kmat = self.mats[i] @ self.mats[j].T * self.phi[i, j]
        return kmat, self.div_xp[i, j], self.div_xp[j, i], self.trace[i, j]


def build_gram_cache(kernel, data) -> GramCache:
    x = as_data(data)
    n, d = x.shape
    if kernel.d != d:
        raise InvalidInputError(f"kernel dimension {kernel.d} != data dimension {d}")
    phi = np.empty((n, n))
    div_xp = np.empty((n, n, d))
    trace = np.empty((n, n))
    if isinstance(kernel, HammingKernel):
        for b in _blocks(n):
            pc = discrete_pieces(kernel, x[b, None, :], x[None, :, :])
            phi[b], div_xp[b], trace[b] = pc.kval, pc.div_xp, pc.trace
        return GramCache(kernel, x, "discrete", phi, None, div_xp, trace)
    if not isinstance(kernel, WeightedKernel):
        raise InvalidInputError("unsupported kernel type")
    for b in _blocks(n):
        pc = kernel_pieces(kernel, x[b, None, :], x[None, :, :])
        phi[b], div_xp[b], trace[b] = pc.phi, pc.div_xp, pc.trace
    mats = np.array(kernel.weight.evaluate(x))
    return GramCache(kernel, x, "langevin", phi, mats, div_xp, trace)


def _resolve_cache(kernel, data, cache):
    x = as_data(data)
    if cache is None:
        return x, build_gram_cache(kernel, x)
    if not cache.matches(x):
        raise CacheMismatchError("Gram cache was built for a different dataset")
    return x, cache


def _is_discrete(model) -> bool:
    return getattr(model, "kind", "continuous") == "discrete"


def _scores(model, x, theta):
    if _is_discrete(model):
        return model.ratios(x, theta)
    return model.score(x, theta)


def ksd_vstat(model, kernel, data, theta, cache: GramCache | None = None,
              threads: int = 1) -> KsdValue:
    """(1/n^2) sum_{i,j} SSK(x_i, x_j) including every theta-independent term."""
    x, cache = _resolve_cache(kernel, data, cache)
    n = x.shape[0]
    s = _scores(model, x, theta)
    if s.shape != x.shape:
        raise InvalidInputError("model and data dimensions disagree")

    if cache.kind == "discrete":
        def part(b):
            quad = np.sum(s[b] * (cache.phi[b] @ s))
            return quad - 2.0 * np.sum(s[b] * cache.row_xp[b])
    else:
        u = np.einsum("akl,ak->al", cache.mats, s)

        def part(b):
            quad = np.sum(u[b] * (cache.phi[b] @ u))
            return quad + 2.0 * np.sum(s[b] * cache.row_xp[b])

    total = tree_sum(_map_blocks(part, n, threads) + [cache.trace_total])
    return KsdValue(total / n ** 2)


def ksd_naive(model, kernel, data, theta) -> float:
    """Unmemoised O(n^2) double loop over single pairs."""
    from .stein import discrete_ssk, langevin_ssk

    x = as_data(data)
    s = _scores(model, x, theta)
    n = x.shape[0]
    total = 0.0
    for i in range(n):
        for j in range(n):
            if _is_discrete(model):
                total += discrete_ssk(kernel, s[i], s[j], x[i], x[j])
            else:
                total += langevin_ssk(kernel, s[i], s[j], x[i], x[j])
    return total / n ** 2


def ksd_rank_one(model, data, theta) -> KsdValue:
    """|mean score|^2: the constant-kernel K = I_d loss up to a theta-free constant."""
    x = as_data(data)
    mean = model.score(x, theta).mean(axis=0)
    return KsdValue(float(mean @ mean), up_to_constant=True)


def ksd_minibatch(model, kernel, data, theta, batch_pairs: int, seed) -> float:
    """Unbiased estimate of the V-statistic from uniformly drawn index pairs.

    When ``batch_pairs == n**2`` every pair is used once and the result is exact.
    """
    if batch_pairs < 1:
        raise InvalidInputError("batch_pairs must be >= 1")
    x = as_data(data)
    n = x.shape[0]
    if batch_pairs == n * n:
        i, j = np.divmod(np.arange(n * n), n)
    else:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, n, batch_pairs)
        j = rng.integers(0, n, batch_pairs)
    s = _scores(model, x, theta)
    if _is_discrete(model):
        vals = discrete_ssk_from_pieces(discrete_pieces(kernel, x[i], x[j]), s[i], s[j])
    else:
        vals = langevin_ssk_from_pieces(kernel_pieces(kernel, x[i], x[j]), s[i], s[j])
    return float(vals.mean())


def _theta_grad(model, x, theta):
    if _is_discrete(model):
        return model.theta_grad_ratios(x, theta)
    return model.theta_grad_score(x, theta)


def ksd_grad_theta(model, kernel, data, theta, cache: GramCache | None = None) -> np.ndarray:
    """Gradient of the V-statistic in theta."""
    x, cache = _resolve_cache(kernel, data, cache)
    n = x.shape[0]
    s = _scores(model, x, theta)
    g = _theta_grad(model, x, theta)
    if cache.kind == "discrete":
        inner = cache.phi @ s - cache.row_xp
    else:
        u = np.einsum("akl,ak->al", cache.mats, s)
        inner = np.einsum("akl,al->ak", cache.mats, cache.phi @ u) + cache.row_xp
    return 2.0 * np.einsum("adp,ad->p", g, inner) / n ** 2


def _fd_step(theta_h):
    return np.finfo(float).eps ** (1.0 / 3.0) * max(1.0, abs(theta_h))


def ksd_hess_theta(model, kernel, data, theta, cache: GramCache | None = None) -> np.ndarray:
    """Hessian in theta: exact for natural exponential families (2 Lambda_n),
    central differences of the analytic gradient otherwise."""
    x, cache = _resolve_cache(kernel, data, cache)
    n = x.shape[0]
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if isinstance(model, ExponentialFamily) and model.natural and cache.kind == "langevin":
        g = model.grad_t(x)
        p = g.shape[2]
        w = np.einsum("akl,akp->alp", cache.mats, g)
        v = (cache.phi @ w.reshape(n, -1)).reshape(w.shape)
        h = 2.0 * w.reshape(-1, p).T @ v.reshape(-1, p) / n ** 2
        return 0.5 * (h + h.T)
    p = theta.size
    h = np.empty((p, p))
    for k in range(p):
        step = _fd_step(theta[k])
        tp, tm = theta.copy(), theta.copy()
        tp[k] += step
        tm[k] -= step
        h[:, k] = (ksd_grad_theta(model, kernel, x, tp, cache)
                   - ksd_grad_theta(model, kernel, x, tm, cache)) / (2.0 * step)
    return 0.5 * (h + h.T)
