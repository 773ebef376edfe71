"""Statistical diagnostics for the datamodel machinery.

Each check returns a :class:`Check`; :func:`run_all` runs the full suite.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List

import numpy as np

from .datamodel import FitConfig, fit_instance, fit_lasso, linear_approx_theta, sample_masks
from .mppi import MppiConfig, evaluate_samples, make_rng
from .offline import StateDistribution, sample_initial_state
from .vehicle import EnvConfig


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""

    def __post_init__(self):
        self.passed = bool(self.passed)
        self.value = float(self.value)
        self.threshold = float(self.threshold)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name}: {self.value:.6g} (threshold {self.threshold:g}) {self.detail}".rstrip()


def mask_independence(seed: int = 0, K: int = 10, M: int = 10_000, alpha: float = 0.5) -> Check:
    """Largest off-diagonal correlation between mask bits."""
    b = sample_masks(M, K, alpha, make_rng(seed, 1)).astype(float)
    c = np.corrcoef(b.T)
    worst = float(np.max(np.abs(c[~np.eye(K, dtype=bool)])))
    return Check("mask_bit_independence", worst < 0.05, worst, 0.05, f"K={K} M={M} alpha={alpha}")


def _denominator_samples(e, alpha, n_masks, rng):
    return (rng.random((n_masks, e.size)) < alpha) @ e


def concentration_uniform(seed: int = 0, K: int = 100, alpha: float = 0.5, n_masks: int = 10_000) -> Check:
    """CV of the weight normalizer over random masks with near-uniform weights.

    For equal weights the normalizer is a scaled Binomial(K, alpha), so its
    CV is sqrt((1 - alpha) / (alpha K)); 0.1 at the default K and alpha.
    """
    e = np.exp(-make_rng(seed, 2).uniform(0.0, 1e-3, K))
    d = _denominator_samples(e, alpha, n_masks, make_rng(seed, 3))
    cv = float(d.std() / d.mean())
    floor = math.sqrt((1 - alpha) / (alpha * K))
    return Check("denominator_cv_below_0.05", cv < 0.05, cv, 0.05,
                 f"K={K} alpha={alpha}; binomial floor {floor:.4f}")


def concentration_matches_theory(seed: int = 0, K: int = 100, alpha: float = 0.5,
                                 n_masks: int = 10_000, lam: float = 100.0) -> Check:
    """Empirical normalizer CV against sqrt(alpha (1-alpha) sum e^2) / (alpha sum e)."""
    c = make_rng(seed, 4).uniform(0.0, 300.0, K)
    e = np.exp(-(c - c.min()) / lam)
    d = _denominator_samples(e, alpha, n_masks, make_rng(seed, 5))
    cv = float(d.std() / d.mean())
    theory = math.sqrt(alpha * (1 - alpha) * np.sum(e * e)) / (alpha * e.sum())
    rel = abs(cv / theory - 1.0)
    return Check("denominator_cv_matches_theory", rel < 0.05, rel, 0.05,
                 f"empirical {cv:.4f} vs theory {theory:.4f}")


def lasso_normal_equations(seed: int = 0, n_problems: int = 50) -> Check:
    """With mu=0 coordinate descent must land on the least-squares solution."""
    rng = make_rng(seed, 6)
    worst = 0.0
    done = 0
    while done < n_problems:
        K = int(rng.integers(1, 6))
        M = int(rng.integers(20, 60))
        B = sample_masks(M, K, 0.5, rng).astype(float)
        A = np.column_stack([B, np.ones(M)])
        if np.linalg.matrix_rank(A) < K + 1:
            continue
        y = A @ rng.normal(size=K + 1) + rng.normal(scale=0.1, size=M)
        ref = np.linalg.lstsq(A, y, rcond=None)[0]
        coef = fit_lasso(B, y, FitConfig(M=M, mu=0.0, cd_tolerance=1e-13, cd_max_sweeps=200_000))
        worst = max(worst, float(np.max(np.abs(np.append(coef.theta, coef.theta0) - ref))))
        done += 1
    return Check("lasso_matches_normal_equations", worst < 1e-6, worst, 1e-6, f"{n_problems} problems")


def lasso_monotone_shrinkage(seed: int = 0) -> Check:
    rng = make_rng(seed, 7)
    B = sample_masks(60, 8, 0.5, rng).astype(float)
    y = B @ rng.normal(size=8) + rng.normal(scale=0.2, size=60)
    norms = [float(np.abs(fit_lasso(B, y, FitConfig(M=60, mu=mu)).theta).sum())
             for mu in np.geomspace(1e-4, 10.0, 10)]
    rises = max(0.0, max(b - a for a, b in zip(norms, norms[1:])))
    return Check("lasso_l1_monotone_in_mu", rises <= 1e-9, rises, 1e-9, "largest increase over 10-point grid")


def equal_cost_uniform_theta() -> Check:
    th = linear_approx_theta(np.full(100, 7.0), 100.0, 0.5)
    spread = float(th.max() - th.min())
    ok = spread == 0.0 and math.isclose(th[0], 7.0 / 50.0, rel_tol=1e-12)
    return Check("equal_costs_give_uniform_linear_theta", ok, spread, 0.0)


def linearity_correlation(env: EnvConfig, seed: int = 0, n_instances: int = 20, K: int = 100,
                          lam: float = 100.0, alpha: float = 0.5, M: int = 200,
                          dist: StateDistribution = StateDistribution(), required: int = 18) -> Check:
    """Pearson correlation of fitted against frozen-normalizer influence per instance."""
    cfg = MppiConfig(K=K, lam=lam)
    corrs = linearity_correlations(env, cfg, seed, n_instances, alpha, M, dist)
    n_ok = int(np.sum(corrs > 0.9))
    return Check("linear_approx_correlation", n_ok >= required, n_ok, required,
                 f"instances with r > 0.9 out of {n_instances}; median r {np.median(corrs):.3f}")


def linearity_correlations(env, cfg: MppiConfig, seed, n_instances, alpha, M, dist) -> np.ndarray:
    out = []
    for i in range(n_instances):
        rng = make_rng(seed, 8, i)
        x0 = sample_initial_state(env, rng, dist)
        inst = evaluate_samples(x0, np.zeros((env.T, 2)), cfg, env, rng)
        theta = fit_instance(inst.total, FitConfig(M=M, alpha=alpha), cfg.lam, rng).theta
        approx = linear_approx_theta(inst.total, cfg.lam, alpha)
        if np.std(theta) == 0 or np.std(approx) == 0:
            out.append(float("nan"))
        else:
            out.append(float(np.corrcoef(theta, approx)[0, 1]))
    return np.array(out)


def run_all(env: EnvConfig, seed: int = 0) -> List[Check]:
    return [
        mask_independence(seed),
        concentration_uniform(seed),
        concentration_matches_theory(seed),
        lasso_normal_equations(seed),
        lasso_monotone_shrinkage(seed),
        equal_cost_uniform_theta(),
        linearity_correlation(env, seed),
    ]
