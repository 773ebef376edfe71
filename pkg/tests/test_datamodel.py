import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dmmppi.datamodel import (FitConfig, denominator_cv, fit_instance, fit_lasso, linear_approx_theta,
                              sample_masks, subset_weighted_cost, subset_weighted_costs)
from dmmppi.mppi import make_rng
from dmmppi.vehicle import DomainError


def test_masks_never_empty():
    m = sample_masks(10, 1, 0.5, make_rng(0))
    assert m.shape == (10, 1) and m.all()


def test_masks_full_alpha_close_to_one():
    m = sample_masks(5, 3, 1 - 1e-12, make_rng(0))
    assert m.all()


def test_masks_inclusion_rate():
    m = sample_masks(2000, 50, 0.3, make_rng(1))
    assert m.mean() == pytest.approx(0.3, abs=0.01)
    assert m.any(axis=1).all()


def test_masks_deterministic():
    assert np.array_equal(sample_masks(20, 8, 0.5, make_rng(3)), sample_masks(20, 8, 0.5, make_rng(3)))


def test_subset_cost_examples():
    assert subset_weighted_cost([1, 0, 1], [1.0, 2.0, 3.0], 1e12) == pytest.approx(2.0)
    assert subset_weighted_cost([0, 1, 0], [1.0, 2.0, 3.0], 1.0) == 2.0
    assert subset_weighted_cost([1, 1], [0.0, 1e4], 1.0) == 0.0
    with pytest.raises(DomainError):
        subset_weighted_cost([0, 0], [1.0, 2.0], 1.0)


@given(c=st.lists(st.floats(0, 1e4), min_size=1, max_size=20), lam=st.floats(0.1, 1e4),
       seed=st.integers(0, 10 ** 6))
def test_subset_cost_is_a_convex_combination(c, lam, seed):
    c = np.array(c)
    masks = sample_masks(5, len(c), 0.5, make_rng(seed))
    for m, s in zip(masks, subset_weighted_costs(masks, c, lam)):
        lo, hi = c[m].min(), c[m].max()
        assert lo - 1e-9 * (1 + abs(lo)) <= s <= hi + 1e-9 * (1 + abs(hi))


def _brute_lasso(B, y, mu):
    """Minimize the objective over the intercept and two coefficients by dense search."""
    from scipy.optimize import minimize

    def obj(p):
        return np.mean((B @ p[1:] + p[0] - y) ** 2) + mu * np.abs(p[1:]).sum()
    best = None
    for start in itertools.product([-1.0, 0.0, 1.0], repeat=B.shape[1] + 1):
        r = minimize(obj, np.array(start), method="Nelder-Mead",
                     options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 20000})
        if best is None or r.fun < best.fun:
            best = r
    return best


def test_lasso_recovers_exact_linear_target():
    B = np.array([[1, 0], [0, 1], [1, 1], [0, 0]], dtype=float)
    y = 1.0 + B @ [2.0, -3.0]
    coef = fit_lasso(B, y, FitConfig(M=4, mu=0.0))
    np.testing.assert_allclose(coef.theta, [2.0, -3.0], atol=1e-6)
    assert coef.theta0 == pytest.approx(1.0, abs=1e-6)
    assert coef.converged


def test_lasso_large_penalty_gives_zero():
    B = sample_masks(30, 6, 0.5, make_rng(0)).astype(float)
    y = make_rng(1).normal(size=30)
    coef = fit_lasso(B, y, FitConfig(M=30, mu=1e6))
    assert np.all(coef.theta == 0.0)
    assert coef.theta0 == pytest.approx(y.mean())


def test_lasso_matches_direct_minimizer():
    B = sample_masks(12, 2, 0.5, make_rng(4)).astype(float)
    y = B @ [0.7, -0.4] + 0.3 + 0.05 * make_rng(5).normal(size=12)
    coef = fit_lasso(B, y, FitConfig(M=12, mu=0.05))
    ref = _brute_lasso(B, y, 0.05)
    np.testing.assert_allclose(coef.theta, ref.x[1:], atol=1e-4)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10 ** 6), mu=st.floats(1e-3, 0.5))
def test_lasso_satisfies_optimality_conditions(seed, mu):
    rng = make_rng(seed)
    B = sample_masks(40, 6, 0.5, rng).astype(float)
    y = B @ rng.normal(size=6) + rng.normal(scale=0.1, size=40)
    coef = fit_lasso(B, y, FitConfig(M=40, mu=mu))
    assert coef.converged
    r = B @ coef.theta + coef.theta0 - y
    g = (2.0 / 40) * B.T @ r  # gradient of the squared term
    nz = coef.theta != 0
    np.testing.assert_allclose(g[nz], -mu * np.sign(coef.theta[nz]), atol=1e-6)
    assert np.all(np.abs(g[~nz]) <= mu + 1e-6)
    assert abs(r.mean()) < 1e-8


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_lasso_shrinks_monotonically(seed):
    rng = make_rng(seed)
    B = sample_masks(40, 8, 0.5, rng).astype(float)
    y = B @ rng.normal(size=8) + rng.normal(scale=0.3, size=40)
    norms = [np.abs(fit_lasso(B, y, FitConfig(M=40, mu=mu)).theta).sum() for mu in (0.001, 0.01, 0.1, 1.0)]
    assert all(a >= b - 1e-9 for a, b in zip(norms, norms[1:]))


def test_fit_instance_single_sample_is_degenerate():
    coef = fit_instance([3.0], FitConfig(M=4), 1.0, make_rng(0))
    assert coef.degenerate and coef.theta.shape == (1,) and coef.theta[0] == 0.0
    assert coef.theta0 == 3.0


def test_fit_instance_equal_costs_gives_zero_influence():
    coef = fit_instance(np.full(10, 5.0), FitConfig(M=30), 100.0, make_rng(0))
    np.testing.assert_allclose(coef.theta, 0.0, atol=1e-12)
    assert coef.theta0 == pytest.approx(5.0)


def test_fit_instance_two_samples_signs():
    # including the cheap sample pulls the subset cost down
    coef = fit_instance([0.0, 10.0], FitConfig(M=200, mu=1e-4), 1e3, make_rng(2))
    assert coef.theta[0] < 0 < coef.theta[1]


def test_fit_instance_deterministic():
    c = make_rng(0).uniform(0, 300, 20)
    a = fit_instance(c, FitConfig(M=40), 100.0, make_rng(9))
    b = fit_instance(c, FitConfig(M=40), 100.0, make_rng(9))
    assert np.array_equal(a.theta, b.theta) and a.theta0 == b.theta0


def test_linear_approx_examples():
    np.testing.assert_allclose(linear_approx_theta([2.0, 2.0, 2.0, 2.0], 1.0, 0.5), [1.0] * 4)
    th = linear_approx_theta([0.0, 5.0], 1.0, 0.5)
    assert th[0] == 0.0 and th[1] > 0


def test_denominator_cv_matches_theory_for_equal_costs():
    # all e_k equal: D = e * Binomial(K, alpha), CV = sqrt((1 - alpha) / (alpha K))
    cv = denominator_cv(np.zeros(100), 100.0, 0.5, 20000, make_rng(0))
    assert cv == pytest.approx(0.1, rel=0.03)


def test_config_validation():
    with pytest.raises(DomainError):
        FitConfig(M=1)
    with pytest.raises(DomainError):
        FitConfig(alpha=1.0)
    with pytest.raises(DomainError):
        FitConfig(mu=-1.0)
