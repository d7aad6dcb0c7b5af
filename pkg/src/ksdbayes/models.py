"""Statistical models exposed through scores (continuous) or flip ratios (binary).

Continuous models provide ``score(x, theta)`` = grad_x log p_theta(x) for a
batch ``x`` of shape ``(n, d)`` and ``theta_grad_score`` of shape
``(n, d, p)``. Binary-lattice models provide ``ratios(x, theta)`` =
p_theta(x with coordinate i flipped) / p_theta(x) - 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable

import numpy as np

from .errors import InvalidInputError, UnsupportedOperationError

__all__ = [
    "ScoreModel",
    "ExponentialFamily",
    "GaussianMixtureModel",
    "IsingModel",
    "Dataset",
    "ContaminationSpec",
    "make_normal_location",
    "make_liu_model",
    "make_kef_model",
    "make_egm_model",
    "make_ising_model",
    "contaminate",
    "as_data",
    "LIU_PRECISION",
]


def as_data(data) -> np.ndarray:
    """Return observations as a float array of shape (n, d)."""
    x = np.asarray(getattr(data, "x", data), dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] == 0:
        raise InvalidInputError("data must be a non-empty (n, d) array")
    return x


def _theta(theta) -> np.ndarray:
    return np.atleast_1d(np.asarray(theta, dtype=float))


class ScoreModel:
    """Base class for continuous models known through grad_x log p_theta."""

    kind = "continuous"
    d: int
    p: int

    def score(self, x, theta) -> np.ndarray:
        raise NotImplementedError

    def theta_grad_score(self, x, theta) -> np.ndarray:
        """d score / d theta, shape (n, d, p). Central differences by default."""
        theta = _theta(theta)
        x = as_data(x)
        out = np.empty(x.shape + (theta.size,))
        eps = np.finfo(float).eps ** (1.0 / 3.0)
        for h in range(theta.size):
            step = eps * max(1.0, abs(theta[h]))
            tp = theta.copy()
            tm = theta.copy()
            tp[h] += step
            tm[h] -= step
            out[..., h] = (self.score(x, tp) - self.score(x, tm)) / (2.0 * step)
        return out

    def log_density(self, x, theta) -> np.ndarray:
        raise UnsupportedOperationError(f"{getattr(self, 'name', 'model')}: log-density not available")

    def sample(self, n: int, theta, rng) -> np.ndarray:
        raise UnsupportedOperationError(f"{getattr(self, 'name', 'model')}: exact sampling not available")


@dataclass(eq=False)
class ExponentialFamily(ScoreModel):
    """p_theta(x) = exp(eta(theta) . t(x) - a(theta) + b(x)).

    ``grad_t`` returns ``(n, d, k)``; ``grad_b`` returns ``(n, d)``. ``eta`` and
    ``eta_jac`` default to the natural parametrisation.
    """

    name: str
    d: int
    k: int
    t: Callable
    grad_t: Callable
    b: Callable
    grad_b: Callable
    eta: Callable | None = None
    eta_jac: Callable | None = None
    log_partition: Callable | None = None
    sampler: Callable | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def natural(self) -> bool:
        return self.eta is None

    @property
    def p(self) -> int:
        return self.metadata.get("p", self.k)

    def natural_param(self, theta) -> np.ndarray:
        theta = _theta(theta)
        return theta if self.eta is None else np.asarray(self.eta(theta), dtype=float)

    def natural_jac(self, theta) -> np.ndarray:
        theta = _theta(theta)
        if self.eta is None:
            return np.eye(self.k)
        return np.atleast_2d(np.asarray(self.eta_jac(theta), dtype=float))

    def score(self, x, theta):
        x = as_data(x)
        return self.grad_t(x) @ self.natural_param(theta) + self.grad_b(x)

    def theta_grad_score(self, x, theta):
        x = as_data(x)
        return self.grad_t(x) @ self.natural_jac(theta)

    def log_density(self, x, theta):
        """log p_theta(x); normalised only when ``log_partition`` is known."""
        x = as_data(x)
        out = self.t(x) @ self.natural_param(theta) + self.b(x)
        if self.log_partition is not None:
            out = out - self.log_partition(_theta(theta))
        return out

    def sample(self, n, theta, rng):
        if self.sampler is None:
            raise UnsupportedOperationError(f"{self.name}: exact sampling not available")
        return self.sampler(n, _theta(theta), rng)


def make_normal_location() -> ExponentialFamily:
    """N(theta, 1): t(x) = x, b(x) = -x^2/2."""

    def sampler(n, theta, rng):
        return theta[0] + rng.standard_normal((n, 1))

    return ExponentialFamily(
        name="normal-location",
        d=1,
        k=1,
        t=lambda x: x[:, :1],
        grad_t=lambda x: np.ones((x.shape[0], 1, 1)),
        b=lambda x: -0.5 * x[:, 0] ** 2,
        grad_b=lambda x: -x[:, :1],
        log_partition=lambda th: 0.5 * th[0] ** 2 + 0.5 * math.log(2.0 * math.pi),
        sampler=sampler,
    )


def _liu_precision() -> np.ndarray:
    P = np.eye(5)
    P[0, 1] = P[1, 0] = -0.6
    P[0, 2:] = P[2:, 0] = -0.2
    return P


LIU_PRECISION = _liu_precision()


def make_liu_model() -> ExponentialFamily:
    """Five-dimensional model with t(x) = (tanh x_4, tanh x_5) and quadratic b."""
    P = LIU_PRECISION
    cov = np.linalg.inv(P)
    chol = np.linalg.cholesky(cov)

    def t(x):
        return np.tanh(x[:, 3:5])

    def grad_t(x):
        g = np.zeros((x.shape[0], 5, 2))
        sech2 = 1.0 / np.cosh(x[:, 3:5]) ** 2
        g[:, 3, 0] = sech2[:, 0]
        g[:, 4, 1] = sech2[:, 1]
        return g

    def b(x):
        return -0.5 * np.sum((x @ P) * x, axis=1)

    def grad_b(x):
        return -x @ P

    def sampler(n, theta, rng):
        if np.any(theta != 0.0):
            raise UnsupportedOperationError("exact sampling only available at theta = 0")
        return rng.standard_normal((n, 5)) @ chol.T

    return ExponentialFamily(
        name="liu", d=5, k=2, t=t, grad_t=grad_t, b=b, grad_b=grad_b,
        sampler=sampler, metadata={"precision": P, "covariance": cov},
    )


def make_kef_model(p: int = 25) -> ExponentialFamily:
    """Finite-rank kernel exponential family on R with reference density N(0, 3^2).

    Basis functions phi_{i+1}(x) = x^i / sqrt(i!) exp(-x^2/2), i = 0..p-1.
    """
    if not 1 <= p <= 30:
        raise InvalidInputError("basis count p must lie in [1, 30]")
    powers = np.arange(p)
    norms = np.array([1.0 / math.sqrt(math.factorial(i)) for i in range(p)])

    def t(x):
        z = x[:, :1]
        return norms * z ** powers * np.exp(-0.5 * z ** 2)

    def grad_t(x):
        z = x[:, :1]
        lower = np.where(powers > 0, powers * z ** np.maximum(powers - 1, 0), 0.0)
        g = norms * (lower - z ** (powers + 1)) * np.exp(-0.5 * z ** 2)
        return g[:, None, :]

    return ExponentialFamily(
        name="kef", d=1, k=p, t=t, grad_t=grad_t,
        b=lambda x: -x[:, 0] ** 2 / 18.0,
        grad_b=lambda x: -x[:, :1] / 9.0,
        metadata={"prior_variances": 100.0 * np.arange(1, p + 1) ** -1.1},
    )


def make_egm_model(d: int) -> ExponentialFamily:
    """Exponential graphical model in log coordinates x = log w.

    Parameters are node terms theta_i (i < d) followed by edge terms
    theta_ij for i < j in lexicographic order. b(x) = sum_i x_i is the
    change-of-variables term.
    """
    if d < 2:
        raise InvalidInputError("node count d must be >= 2")
    pairs = list(combinations(range(d), 2))
    pi = np.array([i for i, _ in pairs])
    pj = np.array([j for _, j in pairs])
    k = d + len(pairs)

    def t(x):
        e = np.exp(x)
        return -np.concatenate([e, e[:, pi] * e[:, pj]], axis=1)

    def grad_t(x):
        n = x.shape[0]
        e = np.exp(x)
        g = np.zeros((n, d, k))
        g[:, np.arange(d), np.arange(d)] = -e
        ee = e[:, pi] * e[:, pj]
        cols = d + np.arange(len(pairs))
        g[:, pi, cols] = -ee
        g[:, pj, cols] = -ee
        return g

    def sampler(n, theta, rng, steps=2000, step=0.5):
        # Metropolis on x = log w, one independent chain per draw.
        theta = _theta(theta)

        def logp(z):
            return t(z) @ theta + np.sum(z, axis=1)

        z = np.log(rng.exponential(1.0 / np.maximum(theta[:d], 1e-3), size=(n, d)))
        lp = logp(z)
        for _ in range(steps):
            prop = z + step * rng.standard_normal(z.shape)
            lq = logp(prop)
            acc = np.log(rng.random(n)) < lq - lp
            z[acc] = prop[acc]
            lp[acc] = lq[acc]
        return z

    return ExponentialFamily(
        name="egm", d=d, k=k, t=t, grad_t=grad_t,
        b=lambda x: np.sum(x, axis=1),
        grad_b=lambda x: np.ones_like(x),
        sampler=sampler,
        metadata={"pairs": pairs, "nodes": d},
    )


class GaussianMixtureModel(ScoreModel):
    """theta N(mu, 1) + (1 - theta) N(-mu, 1) with mixing weight theta in (0, 1)."""

    name = "gmm"
    d = 1
    p = 1

    def __init__(self, mu: float):
        self.mu = float(mu)

    def _resp(self, x, theta):
        th = float(_theta(theta)[0])
        if not 0.0 < th < 1.0:
            raise InvalidInputError("mixing weight must lie in (0, 1)")
        logit = math.log(th) - math.log1p(-th) + 2.0 * self.mu * x[:, 0]
        return 0.5 * (1.0 + np.tanh(0.5 * logit)), th

    def score(self, x, theta):
        x = as_data(x)
        w, _ = self._resp(x, theta)
        return (-x[:, 0] + self.mu * (2.0 * w - 1.0))[:, None]

    def theta_grad_score(self, x, theta):
        x = as_data(x)
        w, th = self._resp(x, theta)
        return (2.0 * self.mu * w * (1.0 - w) / (th * (1.0 - th)))[:, None, None]

    def log_density(self, x, theta):
        x = as_data(x)[:, 0]
        th = float(_theta(theta)[0])
        a = math.log(th) - 0.5 * (x - self.mu) ** 2
        b = math.log1p(-th) - 0.5 * (x + self.mu) ** 2
        return np.logaddexp(a, b) - 0.5 * math.log(2.0 * math.pi)

    def sample(self, n, theta, rng):
        th = float(_theta(theta)[0])
        sign = np.where(rng.random(n) < th, 1.0, -1.0)
        return (sign * self.mu + rng.standard_normal(n))[:, None]


class IsingModel:
    """Ising model on a side x side lattice with temperature theta > 0.

    p_theta(x) propto exp(theta^{-1} sum_{(i,j) in E} x_i x_j), x in {-1, +1}^d.
    """

    kind = "discrete"
    name = "ising"
    p = 1

    def __init__(self, side: int, periodic: bool = False):
        if side < 2:
            raise InvalidInputError("lattice side must be >= 2")
        self.side = int(side)
        self.periodic = bool(periodic)
        self.d = self.side ** 2
        A = np.zeros((self.d, self.d))
        for r in range(side):
            for c in range(side):
                i = r * side + c
                for dr, dc in ((0, 1), (1, 0)):
                    rr, cc = r + dr, c + dc
                    if periodic:
                        rr %= side
                        cc %= side
                    elif rr >= side or cc >= side:
                        continue
                    j = rr * side + cc
                    if j != i:
                        A[i, j] = A[j, i] = 1.0
        self.adjacency = A
        colour = np.array([(r + c) % 2 for r in range(side) for c in range(side)])
        self._bipartite = not np.any(A[colour == 0][:, colour == 0])
        self._colour = colour

    @staticmethod
    def _temp(theta) -> float:
        th = float(_theta(theta)[0])
        if not th > 0.0:
            raise InvalidInputError("temperature theta must be positive")
        return th

    def _check(self, x):
        x = as_data(x)
        if x.shape[1] != self.d or not np.all(np.abs(x) == 1.0):
            raise InvalidInputError("Ising states must be {-1, +1}^d")
        return x

    def local_field(self, x):
        return self._check(x) @ self.adjacency

    def ratios(self, x, theta):
        """p_theta(x^{(i)}) / p_theta(x) - 1 for every coordinate flip i."""
        th = self._temp(theta)
        x = self._check(x)
        return np.expm1(-2.0 * x * (x @ self.adjacency) / th)

    def theta_grad_ratios(self, x, theta):
        th = self._temp(theta)
        x = self._check(x)
        e = x * (x @ self.adjacency)
        return (np.exp(-2.0 * e / th) * 2.0 * e / th ** 2)[..., None]

    def log_unnormalised(self, x, theta):
        th = self._temp(theta)
        x = self._check(x)
        return 0.5 * np.sum(x * (x @ self.adjacency), axis=1) / th

    def enumerate_states(self, theta):
        """All 2^d states with exact probabilities (small lattices only)."""
        if self.d > 16:
            raise UnsupportedOperationError("enumeration limited to d <= 16")
        idx = np.arange(2 ** self.d)
        bits = (idx[:, None] >> np.arange(self.d)) & 1
        states = 2.0 * bits - 1.0
        logp = self.log_unnormalised(states, theta)
        w = np.exp(logp - logp.max())
        return states, w / w.sum()

    def gibbs_sample(self, n: int, theta, rng, burn_in: int = 10_000, thin: int = 10,
                     init=None) -> np.ndarray:
        """Single-chain Gibbs sampler; one sweep updates every site once."""
        th = self._temp(theta)
        x = (rng.choice([-1.0, 1.0], size=self.d) if init is None
             else np.array(init, dtype=float))
        A = self.adjacency
        out = np.empty((n, self.d))
        groups = ([np.flatnonzero(self._colour == c) for c in (0, 1)] if self._bipartite
                  else [np.array([i]) for i in range(self.d)])

        def sweep():
            for g in groups:
                h = A[g] @ x
                prob = 1.0 / (1.0 + np.exp(-2.0 * h / th))
                x[g] = np.where(rng.random(g.size) < prob, 1.0, -1.0)

        for _ in range(burn_in):
            sweep()
        for s in range(n):
            for _ in range(thin):
                sweep()
            out[s] = x
        return out


def make_ising_model(side: int, periodic: bool = False) -> IsingModel:
    return IsingModel(side, periodic)


@dataclass
class Dataset:
    """Observations plus a mask recording which rows were contaminated."""

    x: np.ndarray
    contaminated: np.ndarray | None = None

    def __post_init__(self):
        self.x = as_data(self.x)
        if self.contaminated is None:
            self.contaminated = np.zeros(self.x.shape[0], dtype=bool)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]


CONTAMINATION_MODES = ("replace-draw", "shift", "replace-fixed")


@dataclass(frozen=True)
class ContaminationSpec:
    """epsilon-contamination: replace-draw draws y + scale * N(0, I); shift adds
    y to the datum; replace-fixed sets the datum to y."""

    epsilon: float
    mode: str
    y: tuple
    scale: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise InvalidInputError("epsilon must lie in [0, 1]")
        if self.mode not in CONTAMINATION_MODES:
            raise InvalidInputError(f"unknown contamination mode {self.mode!r}")
        object.__setattr__(self, "y", tuple(float(v) for v in np.atleast_1d(self.y)))


def contaminate(data, spec: ContaminationSpec, seed) -> Dataset:
    rng = np.random.default_rng(seed)
    x = as_data(data).copy()
    n, d = x.shape
    y = np.broadcast_to(np.asarray(spec.y, dtype=float), (d,))
    mask = rng.random(n) < spec.epsilon
    m = int(mask.sum())
    if spec.mode == "replace-draw":
        x[mask] = y + spec.scale * rng.standard_normal((m, d))
    elif spec.mode == "shift":
        x[mask] = x[mask] + y
    else:
        x[mask] = y
    return Dataset(x, mask)
