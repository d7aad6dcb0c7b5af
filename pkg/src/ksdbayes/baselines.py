"""Reference posteriors for the normal-location and precision-estimation examples:
standard Bayes, the power posterior and MMD-Bayes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .models import LIU_PRECISION, as_data
from .sampler import GeneralisedTarget, QuadratureResult, grid_quadrature

__all__ = [
    "PosteriorTable",
    "standard_bayes_normal",
    "power_posterior_beta",
    "baseline_power_posterior",
    "mmd_squared",
    "baseline_mmd_bayes",
    "liu_log_normaliser",
    "liu_standard_bayes",
]


@dataclass
class PosteriorTable:
    grid: np.ndarray
    density: np.ndarray
    mean: float
    var: float
    beta: float


def _normal_table(mean, var, beta, grid):
    dens = np.exp(-0.5 * (grid - mean) ** 2 / var) / np.sqrt(2.0 * np.pi * var)
    return PosteriorTable(grid, dens, float(mean), float(var), float(beta))


def _default_grid(x):
    return np.linspace(x.min() - 5.0, x.max() + 5.0, 2001)


def standard_bayes_normal(data, grid=None, prior_var: float = 1.0) -> PosteriorTable:
    """N(theta, 1) likelihood with a N(0, prior_var) prior."""
    x = as_data(data)[:, 0]
    n = x.size
    prec = 1.0 / prior_var + n
    grid = _default_grid(x) if grid is None else np.asarray(grid, dtype=float)
    return _normal_table(x.sum() / prec, 1.0 / prec, 1.0, grid)


def power_posterior_beta(data) -> float:
    """sqrt((2 + xbar^2) / (1 + mean(x^2))) for the normal location model."""
    x = as_data(data)[:, 0]
    return float(np.sqrt((2.0 + x.mean() ** 2) / (1.0 + np.mean(x ** 2))))


def baseline_power_posterior(data, grid=None) -> PosteriorTable:
    """Gaussian with mean beta n xbar / (1 + beta n) and variance 1 / (1 + beta n)."""
    x = as_data(data)[:, 0]
    n = x.size
    beta = power_posterior_beta(x)
    bn = beta * n
    grid = _default_grid(x) if grid is None else np.asarray(grid, dtype=float)
    return _normal_table(bn * x.mean() / (1.0 + bn), 1.0 / (1.0 + bn), beta, grid)


def mmd_squared(theta, data) -> float:
    """MMD^2(N(theta, 1), P_n) under k(x, y) = exp(-(x - y)^2) on the real line.

    E k(X, X') for X, X' ~ N(theta, 1) is 1/sqrt(5), whatever theta;
    E k(X, x) = exp(-(theta - x)^2 / 3) / sqrt(3).
    """
    x = as_data(data)[:, 0]
    theta = float(np.asarray(theta, dtype=float).reshape(-1)[0])
    model_term = 1.0 / np.sqrt(5.0)
    cross = np.mean(np.exp(-((theta - x) ** 2) / 3.0)) / np.sqrt(3.0)
    data_term = np.mean(np.exp(-((x[:, None] - x[None, :]) ** 2)))
    return float(model_term - 2.0 * cross + data_term)


def baseline_mmd_bayes(data, grid=None, beta: float = 1.0, prior_var: float = 1.0) -> PosteriorTable:
    """N(0, prior_var) prior times exp(-beta n MMD^2), normalised on ``grid``."""
    x = as_data(data)
    n = x.shape[0]
    if grid is None:
        grid = _default_grid(x[:, 0])
    grid = np.asarray(grid, dtype=float)
    target = GeneralisedTarget(lambda t: -0.5 * float(t[0]) ** 2 / prior_var,
                               lambda t: mmd_squared(t, x), beta, n)
    quad: QuadratureResult = grid_quadrature(target, (grid[0], grid[-1]), grid.size)
    return PosteriorTable(quad.grid[0], quad.density, float(quad.mean[0]),
                          float(quad.cov[0, 0]), beta)


def _liu_marginal_cov():
    cov = np.linalg.inv(LIU_PRECISION)
    return 0.5 * (cov + cov.T)[3:5, 3:5]


def liu_log_normaliser(theta, order: int = 10) -> float:
    """log E[exp(theta_1 tanh X_4 + theta_2 tanh X_5)] under the theta = 0 Gaussian,
    by tensor Gauss-Hermite quadrature on the (X_4, X_5) marginal."""
    nodes, weights = np.polynomial.hermite.hermgauss(order)
    z = np.stack(np.meshgrid(nodes, nodes, indexing="ij"), axis=-1).reshape(-1, 2)
    w = np.outer(weights, weights).ravel() / np.pi
    pts = np.sqrt(2.0) * z @ np.linalg.cholesky(_liu_marginal_cov()).T
    th = np.asarray(theta, dtype=float).reshape(2)
    return float(logsumexp(np.tanh(pts) @ th, b=w))


def liu_standard_bayes(data, bounds=((-3.0, 3.0), (-3.0, 3.0)), resolution: int = 121,
                       prior_var: float = 100.0, order: int = 10) -> QuadratureResult:
    """Standard posterior for the precision-estimation model on a 2-d grid."""
    x = as_data(data)
    n = x.shape[0]
    tsum = np.tanh(x[:, 3:5]).sum(axis=0)

    def log_post(theta):
        return (-0.5 * theta @ theta / prior_var + theta @ tsum
                - n * liu_log_normaliser(theta, order))

    return grid_quadrature(log_post, bounds, resolution)
