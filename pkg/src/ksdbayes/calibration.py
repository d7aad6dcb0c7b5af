"""Minimum-KSD estimation and the data-adaptive loss weight beta.

beta_n = tr(H J^-1 H) / tr(H), where H is the Hessian of the V-statistic at
the minimiser and J the empirical second moment of the per-datum gradient
S_n(x, theta) = (1/n) sum_i grad_theta SSK(x, x_i). The weight actually used
is min(1, beta_n).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .conjugate import quadratic_coeffs
from .errors import InvalidInputError
from .kernel import kernel_pieces
from .ksd import GramCache, _resolve_cache, ksd_grad_theta, ksd_hess_theta, ksd_vstat
from .models import ExponentialFamily, _theta, as_data
from .stein import discrete_pieces

__all__ = [
    "MinimumKsdResult",
    "CalibrationResult",
    "minimum_ksd",
    "s_n",
    "beta_from_matrices",
    "beta_select",
]

RIDGE_LAMBDA = 1e-10
RIDGE_J = 1e-8


@dataclass
class MinimumKsdResult:
    theta: np.ndarray
    loss: float
    grad_norm: float
    converged: bool
    method: str
    flags: list = field(default_factory=list)


def _closed_form(model, kernel, x, cache):
    q = quadratic_coeffs(model, kernel, x, cache)
    try:
        chol = np.linalg.cholesky(q.Lambda)
    except np.linalg.LinAlgError:
        return None
    if np.min(np.diag(chol)) < 1e-12 * max(1.0, np.max(np.diag(chol))):
        return None
    return -0.5 * np.linalg.solve(q.Lambda, q.nu)


def minimum_ksd(model, kernel, data, init=None, cache: GramCache | None = None, *,
                bounds=None, prior_sampler=None, restarts: int = 3, seed=0,
                gtol: float = 1e-8, maxiter: int = 500) -> MinimumKsdResult:
    """Minimise the V-statistic over theta.

    Natural exponential families with non-singular Lambda_n use the closed form
    -Lambda_n^-1 nu_n / 2. Otherwise L-BFGS-B runs from ``init`` or, when
    ``init`` is None, from ``restarts`` draws of ``prior_sampler(rng)``
    (standard normal if not given); the lowest final loss wins.
    """
    x, cache = _resolve_cache(kernel, data, cache)
    flags = []
    ridge = 0.0
    if isinstance(model, ExponentialFamily) and model.natural and cache.kind == "langevin":
        theta = _closed_form(model, kernel, x, cache)
        if theta is not None:
            g = ksd_grad_theta(model, kernel, x, theta, cache)
            return MinimumKsdResult(theta, float(ksd_vstat(model, kernel, x, theta, cache)),
                                    float(np.max(np.abs(g))), True, "closed-form", flags)
        ridge = RIDGE_LAMBDA
        flags.append("lambda-singular-ridge")

    p = model.p
    rng = np.random.default_rng(seed)
    if init is not None:
        starts = [_theta(init)]
    else:
        draw = prior_sampler or (lambda r: r.standard_normal(p))
        starts = [np.atleast_1d(np.asarray(draw(rng), dtype=float)) for _ in range(restarts)]

    def fun(th):
        val = float(ksd_vstat(model, kernel, x, th, cache)) + ridge * th @ th
        grad = ksd_grad_theta(model, kernel, x, th, cache) + 2.0 * ridge * th
        return val, grad

    best = None
    for start in starts:
        if start.size != p:
            raise InvalidInputError(f"initial value must have {p} entries")
        res = optimize.minimize(fun, start, jac=True, method="L-BFGS-B", bounds=bounds,
                                options={"gtol": gtol, "ftol": 0.0, "maxiter": maxiter})
        if best is None or res.fun < best.fun:
            best = res
    theta = best.x
    g = ksd_grad_theta(model, kernel, x, theta, cache) + 2.0 * ridge * theta
    if bounds is not None:
        lo = np.array([-np.inf if b[0] is None else b[0] for b in bounds])
        hi = np.array([np.inf if b[1] is None else b[1] for b in bounds])
        g = np.where(((theta <= lo) & (g > 0)) | ((theta >= hi) & (g < 0)), 0.0, g)
    gnorm = float(np.max(np.abs(g)))
    converged = gnorm < gtol
    if not converged:
        flags.append("not-converged")
    return MinimumKsdResult(theta, float(best.fun), gnorm, converged, "l-bfgs-b", flags)


def s_n(x, theta, model, kernel, data, block: int = 256) -> np.ndarray:
    """(1/n) sum_i grad_theta SSK(x, x_i) at each row of ``x``; shape (m, p)."""
    pts = as_data(x)
    xd = as_data(data)
    n = xd.shape[0]
    theta = _theta(theta)
    discrete = getattr(model, "kind", "continuous") == "discrete"
    if discrete:
        s_d = model.ratios(xd, theta)
        g_d = model.theta_grad_ratios(xd, theta)
    else:
        s_d = model.score(xd, theta)
        g_d = model.theta_grad_score(xd, theta)
        m_d = kernel.weight.evaluate(xd)
        u_d = np.einsum("nkl,nk->nl", m_d, s_d)

    out = np.empty((pts.shape[0], g_d.shape[2]))
    for start in range(0, pts.shape[0], block):
        xb = pts[start:start + block]
        if discrete:
            s_b = model.ratios(xb, theta)
            g_b = model.theta_grad_ratios(xb, theta)
            pc = discrete_pieces(kernel, xb[:, None, :], xd[None, :, :])
            k = pc.kval[..., None]
            first = k * s_d[None] - pc.div_xp
            second = k * s_b[:, None] - pc.div_x
        else:
            s_b = model.score(xb, theta)
            g_b = model.theta_grad_score(xb, theta)
            pc = kernel_pieces(kernel, xb[:, None, :], xd[None, :, :])
            m_b = kernel.weight.evaluate(xb)
            u_b = np.einsum("mkl,mk->ml", m_b, s_b)
            phi = pc.phi[..., None]
            first = phi * np.einsum("mkl,nl->mnk", m_b, u_d) + pc.div_xp
            second = phi * np.einsum("nkl,ml->mnk", m_d, u_b) + pc.div_x
        out[start:start + block] = (np.einsum("mdp,mnd->mp", g_b, first)
                                    + np.einsum("ndp,mnd->mp", g_d, second)) / n
    return out


def beta_from_matrices(H, J):
    """beta_n = tr(H J^-1 H) / tr(H) and beta = min(1, beta_n)."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    J = np.atleast_2d(np.asarray(J, dtype=float))
    beta_n = float(np.trace(H @ np.linalg.solve(J, H)) / np.trace(H))
    return beta_n, min(1.0, beta_n)


@dataclass
class CalibrationResult:
    theta_n: np.ndarray
    H_n: np.ndarray
    J_n: np.ndarray
    beta_n: float
    beta: float
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "theta_n": np.atleast_1d(self.theta_n).tolist(),
            "H_n": np.atleast_2d(self.H_n).tolist(),
            "J_n": np.atleast_2d(self.J_n).tolist(),
            "beta_n": self.beta_n,
            "beta": self.beta,
            "flags": list(self.flags),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _needs_ridge(a):
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return True
    w = np.linalg.eigvalsh(a)
    return w[0] <= 1e-12 * max(w[-1], 0.0)


def beta_select(model, kernel, data, init=None, cache: GramCache | None = None,
                theta_n=None, **min_opts) -> CalibrationResult:
    """theta_n, H_n, J_n and the weight beta = min(1, beta_n).

    Singular J_n gets a ridge of 1e-8 tr(J_n)/p (tr(H_n) when J_n vanishes); a
    non-positive-definite H_n gets the same relative ridge. Both are recorded
    in ``flags``.
    """
    x, cache = _resolve_cache(kernel, data, cache)
    flags = []
    if theta_n is None:
        fit = minimum_ksd(model, kernel, x, init, cache, **min_opts)
        theta_n = fit.theta
        flags.extend(fit.flags)
    theta_n = _theta(theta_n)
    p = theta_n.size
    H = ksd_hess_theta(model, kernel, x, theta_n, cache)
    S = s_n(x, theta_n, model, kernel, x)
    J = S.T @ S / x.shape[0]
    J = 0.5 * (J + J.T)
    if _needs_ridge(J):
        # J == 0 has no scale of its own; borrow the one of H
        scale = np.trace(J) if np.trace(J) > 0 else max(abs(np.trace(H)), 1.0)
        J = J + RIDGE_J * scale / p * np.eye(p)
        flags.append("J-ridge")
    if _needs_ridge(H):
        scale = max(abs(np.trace(H)), 1e-300)
        shift = max(0.0, -np.linalg.eigvalsh(H)[0])
        H = H + (shift + RIDGE_J * scale / p) * np.eye(p)
        flags.append("H-ridge")
    beta_n, beta = beta_from_matrices(H, J)
    return CalibrationResult(theta_n, H, J, beta_n, beta, flags)
