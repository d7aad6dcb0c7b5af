"""Matrix-valued kernels K(x, x') = M(x) phi(x, x') M(x')^T.

phi is the inverse multi-quadric (IMQ) base kernel
``(1 + (x - x')^T Sigma^{-1} (x - x'))^{-gamma}`` and M is a matrix-valued
weighting function with an analytic Jacobian.

Batched evaluation works on broadcastable point arrays of shape ``(..., d)``.
``kernel_pieces(K, X[:, None], Y[None])`` gives every pair of two point
sets; ``kernel_pieces(K, X, Y)`` gives the row-wise pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DegenerateDataError, InvalidInputError, UnsupportedOperationError

__all__ = [
    "ImqBase",
    "ConstantBase",
    "constant_kernel",
    "WeightingFunction",
    "WeightedKernel",
    "KernelPieces",
    "identity_weight",
    "rational_weight",
    "liu_weight",
    "exp_weight",
    "custom_weight",
    "zero_weight",
    "imq_eval",
    "kernel_eval",
    "kernel_div_x",
    "kernel_div_xp",
    "kernel_double_div",
    "kernel_pieces",
    "adaptive_sigma",
    "default_kernel",
]


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise InvalidInputError("non-finite input coordinates")


@dataclass(frozen=True)
class ImqBase:
    """IMQ base kernel with scale matrix ``sigma`` and exponent ``gamma``.

    A scalar ``sigma`` is read as a length-scale, i.e. ``sigma**2 * I_d``.
    """

    sigma: np.ndarray
    gamma: float = 0.5
    precision: np.ndarray = field(init=False, repr=False, compare=False)

    def __init__(self, sigma, gamma: float = 0.5, d: int | None = None):
        sigma = np.asarray(sigma, dtype=float)
        if sigma.ndim == 0:
            if d is None:
                d = 1
            sigma = float(sigma) ** 2 * np.eye(d)
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise InvalidInputError("sigma must be a square matrix or a scalar length-scale")
        if not np.allclose(sigma, sigma.T, rtol=1e-12, atol=1e-14):
            raise InvalidInputError("sigma must be symmetric")
        if not 0.0 < gamma < 1.0:
            raise InvalidInputError("gamma must lie in (0, 1)")
        try:
            chol = np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError as exc:
            raise InvalidInputError("sigma must be positive definite") from exc
        eye = np.eye(sigma.shape[0])
        chol_inv = np.linalg.solve(chol, eye)
        precision = chol_inv.T @ chol_inv
        precision = 0.5 * (precision + precision.T)
        sigma = sigma.copy()
        sigma.setflags(write=False)
        precision.setflags(write=False)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "gamma", float(gamma))
        object.__setattr__(self, "precision", precision)

    @property
    def d(self) -> int:
        return self.sigma.shape[0]


@dataclass(frozen=True)
class ConstantBase:
    """phi == 1, so K(x, x') = M(x) M(x')^T; all base derivatives vanish."""

    dim: int = 1
    gamma: float = 0.0

    @property
    def d(self) -> int:
        return self.dim

    @property
    def precision(self) -> np.ndarray:
        return np.zeros((self.dim, self.dim))


class WeightingFunction:
    """Matrix-valued weight M(x) with Jacobian ``dM[k, i, j] = dM_ij / dx_k``.

    ``evaluate`` maps points ``(..., d)`` to ``(..., d, d)``; ``jacobian`` maps
    them to ``(..., d, d, d)`` with the differentiation index first.
    """

    def __init__(self, tag: str, d: int, evaluate: Callable, jacobian: Callable | None,
                 params: dict | None = None):
        self.tag = tag
        self.d = int(d)
        self._evaluate = evaluate
        self._jacobian = jacobian
        self.params = dict(params or {})

    def __repr__(self):
        return f"WeightingFunction(tag={self.tag!r}, d={self.d}, params={self.params})"

    @property
    def has_jacobian(self) -> bool:
        return self._jacobian is not None

    def __call__(self, x):
        return self.evaluate(x)

    def evaluate(self, x):
        return self._evaluate(np.asarray(x, dtype=float))

    def jacobian(self, x):
        if self._jacobian is None:
            raise UnsupportedOperationError(f"weight {self.tag!r} has no Jacobian")
        return self._jacobian(np.asarray(x, dtype=float))

    def column_divergence(self, x):
        """v_l(x) = sum_i dM_il / dx_i, the only derivative the Stein kernel needs."""
        jac = self.jacobian(x)
        return np.einsum("...iil->...l", jac)


def _diag_weight(tag, d, diag, diag_jac, params=None):
    """Build a weight whose M(x) is diagonal, from ``diag: (..., d) -> (..., d)``
    and ``diag_jac: (..., d) -> (..., d_k, d_i)`` (derivative of entry i in x_k)."""
    eye = np.eye(d)

    def evaluate(x):
        return diag(x)[..., None, :] * eye

    def jacobian(x):
        dj = diag_jac(x)
        return dj[..., :, :, None] * eye

    return WeightingFunction(tag, d, evaluate, jacobian, params)


def identity_weight(d: int = 1) -> WeightingFunction:
    def diag(x):
        return np.ones(x.shape[:-1] + (d,))

    def diag_jac(x):
        return np.zeros(x.shape[:-1] + (d, d))

    return _diag_weight("identity", d, diag, diag_jac)


def zero_weight(d: int = 1) -> WeightingFunction:
    """M == 0. Degenerate; used as a test weight only."""
    def diag(x):
        return np.zeros(x.shape[:-1] + (d,))

    def diag_jac(x):
        return np.zeros(x.shape[:-1] + (d, d))

    return _diag_weight("custom", d, diag, diag_jac, {"kind": "zero"})


def rational_weight(a: float = 1.0, b=0.0, c: float = 1.0, d: int = 1) -> WeightingFunction:
    """M(x) = (a^2 / (a^2 + |x - b|^2))^{c/2} I_d.

    With a=1, b=0, c=1 and d=1 this is (1 + x^2)^{-1/2}.
    """
    if a == 0:
        raise InvalidInputError("length-scale a must be non-zero")
    a2 = float(a) ** 2
    b = np.broadcast_to(np.asarray(b, dtype=float), (d,))

    def scalar(x):
        r2 = np.sum((x - b) ** 2, axis=-1)
        return (a2 / (a2 + r2)) ** (0.5 * c), r2

    def diag(x):
        m, _ = scalar(x)
        return np.repeat(m[..., None], d, axis=-1)

    def diag_jac(x):
        m, r2 = scalar(x)
        grad = -c * m[..., None] * (x - b) / (a2 + r2)[..., None]
        return np.repeat(grad[..., :, None], d, axis=-1)

    return _diag_weight("scalar-rational", d, diag, diag_jac,
                        {"a": float(a), "b": b.tolist(), "c": float(c)})


def liu_weight(d: int = 5) -> WeightingFunction:
    """diag((1 + |x|^2)^{-1/2}, (1 + x_1^2 + x_2^2)^{-1/2}, ..., (1 + x_1^2 + x_d^2)^{-1/2})."""
    if d < 2:
        raise InvalidInputError("liu weight needs d >= 2")

    def diag(x):
        out = np.empty(x.shape)
        out[..., 0] = (1.0 + np.sum(x ** 2, axis=-1)) ** -0.5
        out[..., 1:] = (1.0 + x[..., :1] ** 2 + x[..., 1:] ** 2) ** -0.5
        return out

    def diag_jac(x):
        m = diag(x)
        m3 = m ** 3
        jac = np.zeros(x.shape + (d,))
        jac[..., :, 0] = -x * m3[..., :1]
        idx = np.arange(1, d)
        jac[..., 0, 1:] = -x[..., :1] * m3[..., 1:]
        jac[..., idx, idx] = -x[..., 1:] * m3[..., 1:]
        return jac

    return _diag_weight("liu-diagonal", d, diag, diag_jac)


def exp_weight(d: int) -> WeightingFunction:
    """[M(x)]_ii = exp(-x_i)."""
    def diag(x):
        return np.exp(-x)

    def diag_jac(x):
        return -np.exp(-x)[..., None, :] * np.eye(d)

    return _diag_weight("exp-diagonal", d, diag, diag_jac)


def custom_weight(evaluate: Callable, jacobian: Callable | None, d: int, *,
                  check: bool = True, seed: int = 0) -> WeightingFunction:
    """Wrap user-supplied M and dM. The Jacobian is checked against central
    finite differences at random points unless ``check=False``."""
    w = WeightingFunction("custom", d, evaluate, jacobian)
    if check and jacobian is not None:
        rng = np.random.default_rng(seed)
        pts = rng.normal(size=(5, d))
        h = 1e-6
        analytic = w.jacobian(pts)
        for k in range(d):
            e = np.zeros(d)
            e[k] = h
            fd = (w.evaluate(pts + e) - w.evaluate(pts - e)) / (2 * h)
            err = np.abs(fd - analytic[:, k])
            scale = np.maximum(np.abs(analytic[:, k]), 1.0)
            if np.max(err / scale) > 1e-5:
                raise InvalidInputError("custom weight Jacobian disagrees with finite differences")
    return w


@dataclass(frozen=True)
class WeightedKernel:
    base: ImqBase
    weight: WeightingFunction

    def __post_init__(self):
        if self.weight.d != self.base.d:
            raise InvalidInputError(
                f"weight dimension {self.weight.d} != kernel dimension {self.base.d}")

    @property
    def d(self) -> int:
        return self.base.d

    def __call__(self, x, xp):
        return kernel_eval(self, x, xp)


def default_kernel(data, weight: WeightingFunction | None = None, gamma: float = 0.5,
                   shrinkage: float = 0.1, sigma=None) -> WeightedKernel:
    """IMQ kernel with data-adaptive scale (unless ``sigma`` is given)."""
    x = _as_2d(data)
    d = x.shape[1]
    if sigma is None:
        sigma = adaptive_sigma(x, shrinkage)
    base = ImqBase(sigma, gamma, d=d)
    return WeightedKernel(base, weight if weight is not None else identity_weight(d))


def constant_kernel(d: int = 1, weight: WeightingFunction | None = None) -> WeightedKernel:
    """K(x, x') = M(x) M(x')^T; with the identity weight this is K == I_d."""
    return WeightedKernel(ConstantBase(d), weight if weight is not None else identity_weight(d))


@dataclass
class KernelPieces:
    """theta-independent ingredients of the Langevin Stein kernel for point pairs.

    ``phi`` has the pair shape; ``mx``/``my`` are M at each side (pair shape
    broadcast against ``(d, d)``); ``div_xp`` and ``div_x`` are the divergences
    in the second and first argument; ``trace`` is
    sum_ij d^2 K_ij / dx_i dx'_j.
    """

    phi: np.ndarray
    mx: np.ndarray
    my: np.ndarray
    div_xp: np.ndarray
    div_x: np.ndarray
    trace: np.ndarray

    def matrix(self):
        """Full K(x, x') for every pair, shape ``(..., d, d)``."""
        return np.einsum("...ik,...jk->...ij", self.mx, self.my) * self.phi[..., None, None]


def kernel_pieces(K: WeightedKernel, x, y) -> KernelPieces:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_finite(x, y)
    d = K.d
    if x.shape[-1] != d or y.shape[-1] != d:
        raise InvalidInputError("point dimension does not match kernel")
    P = K.base.precision
    gam = K.base.gamma

    u = x - y
    pu = u @ P
    q = np.sum(u * pu, axis=-1)
    one_q = 1.0 + q
    phi = one_q ** -gam
    gp = -gam * one_q ** (-gam - 1.0)
    gpp = gam * (gam + 1.0) * one_q ** (-gam - 2.0)
    grad = 2.0 * gp[..., None] * pu  # d phi / dx; d phi / dx' = -grad

    mx = K.weight.evaluate(x)
    my = K.weight.evaluate(y)
    vx = K.weight.column_divergence(x)
    vy = K.weight.column_divergence(y)

    alpha = np.einsum("...kl,...k->...l", mx, pu)  # M(x)^T P u
    beta = np.einsum("...kl,...k->...l", my, pu)   # M(x')^T P u
    w1 = np.einsum("...kl,...l->...k", mx, vy)     # M(x) v(x')
    w2 = np.einsum("...kl,...l->...k", my, vx)     # M(x') v(x)

    div_xp = (-2.0 * gp)[..., None] * np.einsum("...kl,...l->...k", mx, beta) + phi[..., None] * w1
    div_x = (2.0 * gp)[..., None] * np.einsum("...kl,...l->...k", my, alpha) + phi[..., None] * w2

    pmx = np.einsum("ab,...bl->...al", P, mx)
    tr_pa = np.einsum("...kl,...kl->...", pmx, my)
    trace = (-4.0 * gpp * np.sum(alpha * beta, axis=-1) - 2.0 * gp * tr_pa
             + np.sum(grad * (w1 - w2), axis=-1) + phi * np.sum(vx * vy, axis=-1))

    shape = phi.shape
    return KernelPieces(
        phi=phi,
        mx=np.broadcast_to(mx, shape + (d, d)),
        my=np.broadcast_to(my, shape + (d, d)),
        div_xp=div_xp,
        div_x=div_x,
        trace=trace,
    )


def _vec(x, d):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (d,):
        raise InvalidInputError(f"expected a point of dimension {d}, got shape {x.shape}")
    return x


def imq_eval(base: ImqBase, x, xp) -> float:
    x = _vec(x, base.d)
    xp = _vec(xp, base.d)
    _check_finite(x, xp)
    u = x - xp
    return float((1.0 + u @ base.precision @ u) ** -base.gamma)


def kernel_eval(K: WeightedKernel, x, xp) -> np.ndarray:
    x = _vec(x, K.d)
    xp = _vec(xp, K.d)
    phi = imq_eval(K.base, x, xp)
    return K.weight.evaluate(x) @ K.weight.evaluate(xp).T * phi


def kernel_div_xp(K: WeightedKernel, x, xp) -> np.ndarray:
    """(div_{x'} K)_i = sum_j dK_ij / dx'_j."""
    return kernel_pieces(K, _vec(x, K.d), _vec(xp, K.d)).div_xp


def kernel_div_x(K: WeightedKernel, x, xp) -> np.ndarray:
    """(div_x K)_j = sum_i dK_ij / dx_i."""
    return kernel_pieces(K, _vec(x, K.d), _vec(xp, K.d)).div_x


def kernel_double_div(K: WeightedKernel, x, xp) -> float:
    return float(kernel_pieces(K, _vec(x, K.d), _vec(xp, K.d)).trace)


def _as_2d(data) -> np.ndarray:
    x = np.asarray(getattr(data, "x", data), dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x


def adaptive_sigma(data, shrinkage: float = 0.1) -> np.ndarray:
    """Shrinkage covariance (1 - s) S + s (tr(S)/d) I of the data."""
    x = _as_2d(data)
    n, d = x.shape
    if n < 2:
        raise DegenerateDataError("need at least two observations")
    if not 0.0 <= shrinkage <= 1.0:
        raise InvalidInputError("shrinkage must lie in [0, 1]")
    _check_finite(x)
    S = np.atleast_2d(np.cov(x, rowvar=False, ddof=1))
    target = np.trace(S) / d
    if target <= 0.0:
        raise DegenerateDataError("data have zero variance")
    out = (1.0 - shrinkage) * S + shrinkage * target * np.eye(d)
    out = 0.5 * (out + out.T)
    if np.linalg.eigvalsh(out)[0] <= 0.0:
        raise DegenerateDataError("covariance estimate is singular; increase shrinkage")
    return out
