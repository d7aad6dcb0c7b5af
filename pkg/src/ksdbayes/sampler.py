"""Evaluating and sampling generalised posteriors pi(theta) exp(-beta n L(theta))."""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import BoundsTooTightError, EssDegenerateWarning, InvalidInputError, SamplerError
from .ksd import build_gram_cache, ksd_vstat

__all__ = [
    "GeneralisedTarget",
    "ksd_target",
    "log_generalised_posterior",
    "Chain",
    "rwm_sample",
    "rwm_chains",
    "QuadratureResult",
    "grid_quadrature",
    "ess",
    "mcse",
]


@dataclass
class GeneralisedTarget:
    """log_prior(theta) - beta * n * loss(theta)."""

    log_prior: Callable
    loss: Callable
    beta: float
    n: int

    def __call__(self, theta) -> float:
        return log_generalised_posterior(self, theta)


def log_generalised_posterior(target: GeneralisedTarget, theta) -> float:
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    lp = float(target.log_prior(theta))
    if lp == -np.inf:
        return -np.inf
    if target.beta == 0:
        return lp
    return lp - target.beta * target.n * float(target.loss(theta))


def ksd_target(model, kernel, data, log_prior, beta, cache=None) -> GeneralisedTarget:
    """Target whose loss is the V-statistic, with the Gram cache built once."""
    if cache is None:
        cache = build_gram_cache(kernel, data)
    x = cache.x

    def loss(theta):
        # extreme proposals can overflow the score; the sampler rejects non-finite values
        with np.errstate(over="ignore", invalid="ignore"):
            return float(ksd_vstat(model, kernel, x, theta, cache))

    return GeneralisedTarget(log_prior, loss, float(beta), x.shape[0])


@dataclass
class Chain:
    draws: np.ndarray
    acceptance_rate: float
    seed: object
    scale: float
    scale_history: np.ndarray
    warmup: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed if isinstance(self.seed, (int, type(None))) else str(self.seed),
            "acceptance_rate": self.acceptance_rate,
            "scale": self.scale,
            "draws": int(self.draws.shape[0]),
            **self.meta,
        }


TARGET_ACCEPT = 0.234


def rwm_sample(target, init, m: int, seed, adapt: bool = True, scale: float | None = None,
               keep_warmup: bool = False) -> Chain:
    """Gaussian random-walk Metropolis.

    ``m // 4`` warmup iterations come first; during them the proposal scale is
    tuned by Robbins-Monro toward 23.4% acceptance (if ``adapt``), and it is
    frozen afterwards. ``m`` post-warmup draws are returned.
    """
    if m < 1:
        raise InvalidInputError("m must be positive")
    rng = np.random.default_rng(seed)
    x = np.atleast_1d(np.asarray(init, dtype=float)).copy()
    p = x.size
    lp = float(target(x))
    if not np.isfinite(lp):
        raise SamplerError("log-density is not finite at the initial value")
    log_scale = np.log(scale if scale is not None else 2.38 / np.sqrt(p))
    n_warm = m // 4
    history = np.empty(n_warm + m)
    warm = np.empty((n_warm, p))
    draws = np.empty((m, p))
    accepted = 0
    for it in range(n_warm + m):
        prop = x + np.exp(log_scale) * rng.standard_normal(p)
        lp_prop = float(target(prop))
        log_alpha = lp_prop - lp if np.isfinite(lp_prop) else -np.inf
        acc = np.log(rng.random()) < log_alpha
        if acc:
            x, lp = prop, lp_prop
        if it < n_warm:
            if adapt:
                a = min(1.0, float(np.exp(min(log_alpha, 0.0))))
                log_scale += (a - TARGET_ACCEPT) / (it + 1) ** 0.6
            warm[it] = x
        else:
            accepted += acc
            draws[it - n_warm] = x
        history[it] = np.exp(log_scale)
    rate = accepted / m
    if accepted == 0:
        raise SamplerError("every post-warmup proposal was rejected")
    return Chain(draws, rate, seed, float(np.exp(log_scale)), history,
                 warm if keep_warmup else None)


def rwm_chains(target, inits, m: int, seed, workers: int = 1, **kw) -> list:
    """Independent chains with spawned seeds; identical output for any ``workers``."""
    seqs = np.random.SeedSequence(seed).spawn(len(inits))

    def run(i):
        return rwm_sample(target, inits[i], m, seqs[i], **kw)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, range(len(inits))))
    return [run(i) for i in range(len(inits))]


@dataclass
class QuadratureResult:
    grid: list          # one axis per parameter
    density: np.ndarray  # normalised, shape of the tensor grid
    mean: np.ndarray
    cov: np.ndarray
    boundary_mass: float


def _trapz_all(f, axes):
    out = f
    for ax in reversed(axes):
        out = np.trapezoid(out, ax, axis=-1)
    return float(out)


def grid_quadrature(target, bounds, resolution=2001, strict: bool = True) -> QuadratureResult:
    """Trapezoid-rule normalisation and moments on a 1-d or 2-d tensor grid.

    ``bounds`` is ``(lo, hi)`` or a list of such pairs. With ``strict`` a
    BoundsTooTightError is raised when the mass near the edge of the box
    exceeds 1e-6; pass ``strict=False`` when the support ends at the box.
    """
    b = np.asarray(bounds, dtype=float)
    if b.ndim == 1:
        b = b[None]
    p = b.shape[0]
    if p > 2:
        raise InvalidInputError("grid quadrature supports at most two parameters")
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (p,))
    axes = [np.linspace(lo, hi, r) for (lo, hi), r in zip(b, res)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=1)
    logd = np.array([target(t) for t in pts]).reshape(mesh[0].shape)
    top = np.max(logd)
    if not np.isfinite(top):
        raise InvalidInputError("target has no finite mass on the grid")
    dens = np.exp(logd - top)
    z = _trapz_all(dens, axes)
    dens = dens / z
    mean = np.array([_trapz_all(dens * g, axes) for g in mesh])
    cov = np.empty((p, p))
    for i in range(p):
        for j in range(p):
            cov[i, j] = _trapz_all(dens * (mesh[i] - mean[i]) * (mesh[j] - mean[j]), axes)
    # mass within one grid cell of the edge, bounded by edge density times cell volume
    widths = b[:, 1] - b[:, 0]
    edge = 0.0
    for i in range(p):
        face = np.maximum(np.take(dens, 0, axis=i).max(), np.take(dens, -1, axis=i).max())
        edge = max(edge, face * np.prod(widths) / widths[i] * (axes[i][1] - axes[i][0]))
    if strict and edge > 1e-6:
        raise BoundsTooTightError(f"mass {edge:.3g} at the grid boundary; widen the bounds")
    return QuadratureResult(axes, dens, mean, cov, float(edge))


def _ess_1d(x):
    m = x.size
    xc = x - x.mean()
    var = xc @ xc / m
    if not var > 1e-300 * max(1.0, float(np.max(np.abs(x))) ** 2):
        return None
    nfft = 1 << (2 * m - 1).bit_length()
    f = np.fft.rfft(xc, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:m] / m
    rho = acov / acov[0]
    total = 0.0
    prev = np.inf
    for k in range(m // 2):
        pair = rho[2 * k] + rho[2 * k + 1]
        if pair <= 0:
            break
        pair = min(pair, prev)  # initial monotone sequence
        total += pair
        prev = pair
    tau = max(2.0 * total - 1.0, 1.0 / np.log10(max(m, 10)))
    return m / tau


def ess(chain) -> float:
    """Effective sample size (Geyer initial positive sequence), min over coordinates.

    A constant chain gets ESS 1 and an :class:`EssDegenerateWarning`.
    """
    draws = np.asarray(getattr(chain, "draws", chain), dtype=float)
    if draws.ndim == 1:
        draws = draws[:, None]
    if draws.shape[0] < 100:
        raise InvalidInputError("ESS needs at least 100 draws")
    vals = []
    for j in range(draws.shape[1]):
        e = _ess_1d(draws[:, j])
        if e is None:
            warnings.warn("chain coordinate has zero variance", EssDegenerateWarning,
                          stacklevel=2)
            e = 1.0
        vals.append(e)
    return float(min(vals))


def mcse(chain) -> np.ndarray:
    """Monte Carlo standard error of the chain mean, per coordinate."""
    draws = np.asarray(getattr(chain, "draws", chain), dtype=float)
    if draws.ndim == 1:
        draws = draws[:, None]
    return np.array([draws[:, j].std(ddof=1) / np.sqrt(ess(draws[:, j]))
                     for j in range(draws.shape[1])])
