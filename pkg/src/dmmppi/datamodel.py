"""Per-instance datamodels: random inclusion masks, subset-restricted
Gibbs-weighted costs and a LASSO fit of cost against mask bits."""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .vehicle import DomainError


@dataclass
class FitConfig:
    M: int = 50
    alpha: float = 0.5
    mu: float = 0.01
    cd_tolerance: float = 1e-8
    cd_max_sweeps: int = 10_000

    def __post_init__(self):
        if int(self.M) < 2:
            raise DomainError("need at least 2 subsets")
        if not 0.0 < self.alpha < 1.0:
            raise DomainError("alpha must lie in (0, 1)")
        if self.mu < 0:
            raise DomainError("mu must be non-negative")


@dataclass
class InfluenceCoefficients:
    theta: np.ndarray
    theta0: float
    converged: bool = True
    sweeps: int = 0
    degenerate: bool = False

    @property
    def sparsity(self) -> float:
        """Share of coefficients that are exactly zero."""
        return float(np.mean(self.theta == 0.0)) if self.theta.size else 1.0


def sample_masks(M: int, K: int, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """``(M, K)`` boolean inclusion masks, Bernoulli(alpha) per bit.

    Rows with no bit set are redrawn until they have one.
    """
    masks = rng.random((M, K)) < alpha
    empty = ~masks.any(axis=1)
    while empty.any():
        masks[empty] = rng.random((int(empty.sum()), K)) < alpha
        empty = ~masks.any(axis=1)
    return masks


def subset_weighted_costs(masks: np.ndarray, total_costs, lam: float) -> np.ndarray:
    """Gibbs-weighted mean cost over each mask's samples, one value per row.

    Weights are shifted by the minimum cost inside each subset so the
    exponentials never all underflow; the shift cancels in the ratio.
    """
    b = np.atleast_2d(np.asarray(masks, dtype=bool))
    c = np.asarray(total_costs, dtype=float)
    if b.shape[1] != c.shape[0]:
        raise DomainError("mask length does not match cost vector")
    if not b.any(axis=1).all():
        raise DomainError("empty inclusion mask")
    cmin = np.where(b, c, np.inf).min(axis=1, keepdims=True)
    w = np.exp(-np.where(b, c - cmin, np.inf) / lam)
    return (w * c).sum(axis=1) / w.sum(axis=1)


def subset_weighted_cost(mask, total_costs, lam: float) -> float:
    return float(subset_weighted_costs(np.asarray(mask)[None], total_costs, lam)[0])


@numba.njit(cache=True)
def _lasso_cd(X, y, mu, tol, max_sweeps):
    # minimizes (1/M) ||X theta + theta0 - y||^2 + mu ||theta||_1
    M, K = X.shape
    theta = np.zeros(K)
    theta0 = 0.0
    for j in range(M):
        theta0 += y[j]
    theta0 /= M
    r = y - theta0
    z = np.zeros(K)
    for k in range(K):
        for j in range(M):
            z[k] += X[j, k] * X[j, k]
        z[k] /= M
    half_mu = 0.5 * mu
    sweeps = 0
    converged = False
    while sweeps < max_sweeps:
        sweeps += 1
        max_change = 0.0
        for k in range(K):
            if z[k] == 0.0:
                continue
            old = theta[k]
            g = 0.0
            for j in range(M):
                g += X[j, k] * r[j]
            g = g / M + z[k] * old
            if g > half_mu:
                new = (g - half_mu) / z[k]
            elif g < -half_mu:
                new = (g + half_mu) / z[k]
            else:
                new = 0.0
            d = new - old
            if d != 0.0:
                for j in range(M):
                    r[j] -= X[j, k] * d
                theta[k] = new
                if abs(d) > max_change:
                    max_change = abs(d)
        # closed-form intercept given theta
        shift = 0.0
        for j in range(M):
            shift += r[j]
        shift /= M
        theta0 += shift
        for j in range(M):
            r[j] -= shift
        if abs(shift) > max_change:
            max_change = abs(shift)
        if max_change < tol:
            converged = True
            break
    return theta, theta0, converged, sweeps


def fit_lasso(masks, targets, cfg: FitConfig) -> InfluenceCoefficients:
    """Cyclic coordinate descent with soft-thresholding and a free intercept.

    Mask bits are used unstandardized, so each coefficient is directly the
    marginal change in subset cost from including that sample.
    """
    X = np.ascontiguousarray(np.atleast_2d(masks), dtype=float)
    y = np.ascontiguousarray(targets, dtype=float)
    if X.shape[0] != y.shape[0]:
        raise DomainError("masks and targets disagree on M")
    if X.shape[0] < 2:
        raise DomainError("need at least 2 subsets")
    if not np.all(np.isfinite(y)):
        raise DomainError("non-finite regression targets")
    theta, theta0, converged, sweeps = _lasso_cd(X, y, float(cfg.mu), float(cfg.cd_tolerance),
                                                 int(cfg.cd_max_sweeps))
    return InfluenceCoefficients(theta, float(theta0), bool(converged), int(sweeps))


def fit_instance(total_costs, cfg: FitConfig, lam: float, rng: np.random.Generator) -> InfluenceCoefficients:
    """Masks, subset costs and LASSO for one instance's total costs.

    Accepts an :class:`~dmmppi.mppi.MppiInstance` or a bare cost vector.
    A single-sample instance cannot vary across masks and comes back as an
    intercept-only fit flagged ``degenerate``.
    """
    c = np.asarray(getattr(total_costs, "total", total_costs), dtype=float)
    K = c.shape[0]
    masks = sample_masks(cfg.M, K, cfg.alpha, rng)
    targets = subset_weighted_costs(masks, c, lam)
    if K < 2:
        return InfluenceCoefficients(np.zeros(K), float(targets.mean()), True, 0, degenerate=True)
    return fit_lasso(masks, targets, cfg)


def linear_approx_theta(total_costs, lam: float, alpha: float) -> np.ndarray:
    """Influence implied by freezing the weight normalizer at its mean.

    ``theta_k = e_k C_k / (alpha * sum_j e_j)`` with ``e_k = exp(-C_k/lam)``.
    """
    c = np.asarray(total_costs, dtype=float)
    e = np.exp(-(c - c.min()) / lam)
    return e * c / (alpha * e.sum())


def denominator_cv(total_costs, lam: float, alpha: float, n_masks: int, rng) -> float:
    """Coefficient of variation of the subset weight sum over random masks."""
    c = np.asarray(total_costs, dtype=float)
    e = np.exp(-(c - c.min()) / lam)
    d = (rng.random((n_masks, c.size)) < alpha) @ e
    return float(d.std() / d.mean())
