"""Sensitivity of generalised posteriors to a contaminating datum y.

Contamination is the mixture (1 - eps) P_n + eps delta_y. DL(y, theta) is the
derivative of the loss in eps at eps = 0, and the posterior influence function
is the eps-derivative of the posterior density:

    PIF(y, theta) = beta n pi_n(theta) (-DL(y, theta) + int DL(y, t) pi_n(t) dt).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidInputError
from .kernel import kernel_pieces
from .ksd import GramCache, _resolve_cache, ksd_vstat
from .models import _theta, as_data
from .sampler import GeneralisedTarget, grid_quadrature
from .stein import discrete_pieces, discrete_ssk_from_pieces, langevin_ssk_from_pieces

__all__ = [
    "dl_ksd",
    "dl_nll",
    "PifCurve",
    "pif",
    "BoundResult",
    "robustness_bound",
]


def _ssk_against(model, kernel, x, y, theta):
    """SSK(x_i, y) for every row x_i."""
    y = np.broadcast_to(y, x.shape)
    if getattr(model, "kind", "continuous") == "discrete":
        pc = discrete_pieces(kernel, x, y)
        return discrete_ssk_from_pieces(pc, model.ratios(x, theta), model.ratios(y, theta))
    pc = kernel_pieces(kernel, x, y)
    return langevin_ssk_from_pieces(pc, model.score(x, theta), model.score(y, theta))


def dl_ksd(y, theta, model, kernel, data, cache: GramCache | None = None) -> float:
    """2 mean_i SSK(x_i, y) - 2 KSD^2(P_theta || P_n)."""
    x, cache = _resolve_cache(kernel, data, cache)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape != (x.shape[1],):
        raise InvalidInputError("contaminant dimension does not match the data")
    theta = _theta(theta)
    cross = float(np.mean(_ssk_against(model, kernel, x, y, theta)))
    return 2.0 * cross - 2.0 * float(ksd_vstat(model, kernel, x, theta, cache))


def dl_nll(y, theta, model, data) -> float:
    """(1/n) sum_i log p_theta(x_i) - log p_theta(y)."""
    x = as_data(data)
    y = np.atleast_1d(np.asarray(y, dtype=float))[None, :]
    theta = _theta(theta)
    return float(np.mean(model.log_density(x, theta)) - model.log_density(y, theta)[0])


@dataclass
class PifCurve:
    grid: np.ndarray
    values: np.ndarray
    y: np.ndarray
    normaliser: str = "quadrature"
    integral: float = 0.0
    l1_mass: float = 0.0

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    def window_max_abs(self, lo, hi) -> float:
        sel = (self.grid >= lo) & (self.grid <= hi)
        return float(np.max(np.abs(self.values[sel])))


def pif(y, target: GeneralisedTarget, dl: Callable, bounds, resolution: int = 2001,
        strict: bool = True) -> PifCurve:
    """Influence of contaminant ``y`` on a one-parameter generalised posterior.

    ``dl(y, theta)`` is the loss derivative; the posterior is normalised on an
    evenly spaced grid over ``bounds``.
    """
    quad = grid_quadrature(target, bounds, resolution, strict=strict)
    if len(quad.grid) != 1:
        raise InvalidInputError("influence curves are for one-parameter targets")
    grid = quad.grid[0]
    dens = quad.density
    dlv = np.array([dl(y, np.array([t])) for t in grid])
    mean_dl = np.trapezoid(dlv * dens, grid)
    values = target.beta * target.n * dens * (mean_dl - dlv)
    integral = float(np.trapezoid(values, grid))
    l1 = float(np.trapezoid(np.abs(values), grid))
    return PifCurve(grid, values, np.atleast_1d(np.asarray(y, dtype=float)),
                    "quadrature", integral, l1)


@dataclass
class BoundResult:
    theta_grid: np.ndarray
    sup: np.ndarray       # max over the y-grid of s(y)' K(y, y) s(y)
    argsup: np.ndarray    # maximising y, one row per theta
    gamma: np.ndarray | None
    within: bool | None   # sup <= gamma(theta) everywhere (when gamma given)


def robustness_bound(model, kernel, theta_grid, y_grid, gamma: Callable | None = None,
                     rtol: float = 1e-12) -> BoundResult:
    """Numeric sup over contaminants of the score norm seen through K(y, y).

    K(y, y) = M(y) M(y)^T since the base kernel is 1 on the diagonal. When
    ``gamma`` is given, each sup is compared with gamma(theta).
    """
    ys = as_data(y_grid)
    thetas = np.asarray(theta_grid, dtype=float)
    if thetas.ndim == 1:
        thetas = thetas[:, None] if getattr(model, "p", 1) == 1 else thetas[None, :]
    mats = kernel.weight.evaluate(ys)
    sup = np.empty(thetas.shape[0])
    arg = np.empty((thetas.shape[0], ys.shape[1]))
    for i, th in enumerate(thetas):
        u = np.einsum("nkl,nk->nl", mats, model.score(ys, th))
        vals = np.sum(u * u, axis=1)
        j = int(np.argmax(vals))
        sup[i], arg[i] = vals[j], ys[j]
    if gamma is None:
        return BoundResult(thetas, sup, arg, None, None)
    g = np.array([float(gamma(th)) for th in thetas])
    within = bool(np.all(sup <= g * (1.0 + rtol)))
    return BoundResult(thetas, sup, arg, g, within)
