"""Closed-form posteriors for exponential-family models.

For p_theta(x) = exp(eta . t(x) - a(eta) + b(x)) the V-statistic is an exact
quadratic in eta: KSD^2 = eta' Lambda eta + eta' nu + const. With a Gaussian
prior the generalised posterior pi(theta) exp(-beta n KSD^2) is Gaussian.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import InvalidInputError, UnsupportedOperationError
from .ksd import GramCache, _resolve_cache
from .models import ExponentialFamily

__all__ = [
    "QuadraticLoss",
    "GaussianPosterior",
    "Marginals",
    "quadratic_coeffs",
    "conjugate_update",
    "truncated_marginals",
    "top_edges",
]


@dataclass(frozen=True)
class QuadraticLoss:
    """KSD^2(eta) = eta' Lambda eta + eta' nu + const on one dataset of size n."""

    Lambda: np.ndarray
    nu: np.ndarray
    n: int
    const: float = 0.0
    root: np.ndarray | None = None  # any B with B' B == Lambda

    def __call__(self, eta) -> float:
        eta = np.atleast_1d(np.asarray(eta, dtype=float))
        return float(eta @ self.Lambda @ eta + eta @ self.nu + self.const)

    @property
    def k(self) -> int:
        return self.nu.shape[0]


def _psd_root(phi):
    """R with R' R == phi for a symmetric PSD matrix (clipping roundoff negatives)."""
    w, v = np.linalg.eigh(phi)
    keep = w > 0
    return np.sqrt(w[keep])[:, None] * v[:, keep].T


def quadratic_coeffs(model: ExponentialFamily, kernel, data,
                     cache: GramCache | None = None, root: bool = False) -> QuadraticLoss:
    """Lambda_n, nu_n (and the eta-free remainder) of the V-statistic.

    With ``root=True`` a factor B with B' B = Lambda_n is attached, which lets
    :func:`conjugate_update` stay stable when Lambda_n spans many magnitudes.
    """
    if not isinstance(model, ExponentialFamily):
        raise UnsupportedOperationError("quadratic form needs an exponential-family model")
    if kernel.d != model.d:
        raise InvalidInputError(f"kernel dimension {kernel.d} != model dimension {model.d}")
    x, cache = _resolve_cache(kernel, data, cache)
    if cache.kind != "langevin":
        raise UnsupportedOperationError("quadratic form is for continuous data")
    n = x.shape[0]
    gt = model.grad_t(x)                                  # (n, d, k)
    gb = model.grad_b(x)                                  # (n, d)
    w = np.einsum("akl,akp->alp", cache.mats, gt)         # M_a^T grad t_a
    ub = np.einsum("akl,ak->al", cache.mats, gb)          # M_a^T grad b_a
    k = gt.shape[2]
    pw = (cache.phi @ w.reshape(n, -1)).reshape(w.shape)
    pub = cache.phi @ ub
    lam = np.einsum("adk,adl->kl", w, pw) / n ** 2
    lam = 0.5 * (lam + lam.T)
    nu = 2.0 * (np.einsum("adk,ad->k", w, pub)
                + np.einsum("adk,ad->k", gt, cache.row_xp)) / n ** 2
    const = (np.sum(ub * pub) + 2.0 * np.sum(gb * cache.row_xp) + cache.trace_total) / n ** 2
    factor = None
    if root:
        r = _psd_root(0.5 * (cache.phi + cache.phi.T))
        d = w.shape[1]
        factor = np.concatenate([r @ w[:, l, :] for l in range(d)], axis=0) / n
    return QuadraticLoss(lam.reshape(k, k), nu, n, float(const), factor)


@dataclass(frozen=True)
class GaussianPosterior:
    mean: np.ndarray
    precision: np.ndarray
    truncated: bool = False
    beta: float | None = None
    n: int | None = None
    chol: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        """``chol`` (lower, chol @ chol' == precision) may be supplied directly."""
        prec = np.atleast_2d(np.asarray(self.precision, dtype=float))
        if self.chol is not None:
            chol = np.asarray(self.chol, dtype=float)
        else:
            try:
                chol = np.linalg.cholesky(prec)
            except np.linalg.LinAlgError as exc:
                raise InvalidInputError("posterior precision is not positive definite") from exc
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=float)))
        object.__setattr__(self, "precision", prec)
        object.__setattr__(self, "chol", chol)

    @property
    def cov(self) -> np.ndarray:
        inv = np.linalg.solve(self.chol, np.eye(self.chol.shape[0]))
        return inv.T @ inv

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    def log_density(self, theta) -> float:
        """Normalised Gaussian log-density (truncation ignored)."""
        z = self.chol.T @ (np.atleast_1d(np.asarray(theta, dtype=float)) - self.mean)
        k = self.mean.size
        return float(-0.5 * z @ z + np.sum(np.log(np.diag(self.chol)))
                     - 0.5 * k * np.log(2.0 * np.pi))

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "precision_cholesky": self.chol.tolist(),
            "truncated": self.truncated,
            "beta": self.beta,
            "n": self.n,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _spd(name, a):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[0] != a.shape[1] or not np.allclose(a, a.T, rtol=1e-10, atol=1e-12):
        raise InvalidInputError(f"{name} must be a symmetric matrix")
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise InvalidInputError(f"{name} must be positive definite") from exc
    return a


def conjugate_update(loss: QuadraticLoss, prior_mean, prior_cov, beta,
                     truncated: bool = False) -> GaussianPosterior:
    """Gaussian prior N(mu, Sigma) times exp(-beta n (eta' Lambda eta + eta' nu)).

    Completing the square gives precision Sigma^-1 + 2 beta n Lambda and mean
    precision^-1 (Sigma^-1 mu - beta n nu).
    """
    if not beta > 0:
        raise InvalidInputError("beta must be positive")
    cov = _spd("prior covariance", prior_cov)
    mu = np.atleast_1d(np.asarray(prior_mean, dtype=float))
    if mu.shape[0] != loss.k or cov.shape[0] != loss.k:
        raise InvalidInputError("prior dimension does not match the loss")
    prior_prec = np.linalg.inv(cov)
    prior_prec = 0.5 * (prior_prec + prior_prec.T)
    bn = float(beta) * loss.n
    prec = prior_prec + 2.0 * bn * loss.Lambda
    prec = 0.5 * (prec + prec.T)
    rhs = prior_prec @ mu - bn * loss.nu
    if loss.root is None:
        mean = np.linalg.solve(prec, rhs)
        return GaussianPosterior(mean, prec, truncated, float(beta), loss.n)
    # precision = A' A with A stacked from the prior and loss factors; QR keeps it SPD
    prior_root = np.linalg.cholesky(prior_prec).T
    a = np.vstack([prior_root, np.sqrt(2.0 * bn) * loss.root])
    r = np.linalg.qr(a, mode="r")
    r = r * np.where(np.diag(r) < 0, -1.0, 1.0)[:, None]
    chol = r.T
    mean = scipy.linalg.cho_solve((chol, True), rhs)
    return GaussianPosterior(mean, prec, truncated, float(beta), loss.n, chol)


@dataclass(frozen=True)
class Marginals:
    mean: np.ndarray
    sd: np.ndarray
    score: np.ndarray    # mean / sd, the significance statistic
    ranking: np.ndarray  # coordinate indices by decreasing score


def truncated_marginals(post: GaussianPosterior) -> Marginals:
    """Per-coordinate location and scale of the (untruncated) marginals."""
    sd = post.sd
    score = post.mean / sd
    ranking = np.argsort(-score, kind="stable")
    return Marginals(post.mean.copy(), sd, score, ranking)


def top_edges(post: GaussianPosterior, pairs, s: int) -> list:
    """The ``s`` edges (i, j) with the largest mean/sd scores.

    ``pairs`` lists the edge for each coordinate; coordinates not in ``pairs``
    (e.g. node parameters) are skipped.
    """
    marg = truncated_marginals(post)
    offset = post.mean.size - len(pairs)
    out = []
    for idx in marg.ranking:
        if idx < offset:
            continue
        out.append((tuple(int(v) for v in pairs[idx - offset]), float(marg.score[idx])))
        if len(out) == s:
            break
    return out
