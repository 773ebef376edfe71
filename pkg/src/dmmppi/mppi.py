"""Standard MPPI: Gaussian perturbations, Gibbs weights, weighted control update."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .vehicle import CostBreakdown, DomainError, EnvConfig, clamp_controls, rollout_batch


def make_rng(seed, *key) -> np.random.Generator:
    """Philox (counter-based) generator; ``key`` entries derive independent streams."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, key)])))


@dataclass
class MppiConfig:
    K: int = 100
    lam: float = 100.0
    # per-channel noise variances (steering, acceleration)
    sigma: tuple = (0.1, 0.5)
    rho: float = 1e10
    seed: int = 0

    def __post_init__(self):
        self.sigma = tuple(float(s) for s in self.sigma)
        if int(self.K) < 1:
            raise DomainError("K must be >= 1")
        if not self.lam > 0:
            raise DomainError("lambda must be positive")
        if len(self.sigma) != 2 or min(self.sigma) <= 0:
            raise DomainError("sigma needs two positive variances")
        if self.rho < 0:
            raise DomainError("rho must be non-negative")


@dataclass
class RolloutRecord:
    perturbations: np.ndarray
    controls: np.ndarray
    costs: CostBreakdown
    total_cost: float


@dataclass
class MppiInstance:
    """One control iteration's K rollouts, stored column-wise."""

    perturbations: np.ndarray  # (K, T, 2)
    controls: np.ndarray  # (K, T, 2), nominal + perturbation, before clamping
    goal: np.ndarray
    ctrl: np.ndarray
    viol: np.ndarray
    rho: float
    total: np.ndarray
    mean_cost: float
    std_cost: float
    weights: np.ndarray

    @classmethod
    def from_costs(cls, perturbations, controls, goal, ctrl, viol, rho, lam):
        total = goal + ctrl + rho * viol
        return cls(perturbations, controls, goal, ctrl, viol, float(rho), total,
                   float(np.mean(total)), float(np.std(total)), compute_weights(total, lam))

    @property
    def K(self) -> int:
        return len(self.total)

    @property
    def rollouts(self) -> List[RolloutRecord]:
        return [
            RolloutRecord(self.perturbations[k], self.controls[k],
                          CostBreakdown(float(self.goal[k]), float(self.ctrl[k]), float(self.viol[k])),
                          float(self.total[k]))
            for k in range(self.K)
        ]

    def with_rho(self, rho: float, lam: float) -> "MppiInstance":
        """Same rollouts re-scored at a different violation penalty."""
        return MppiInstance.from_costs(self.perturbations, self.controls, self.goal,
                                       self.ctrl, self.viol, rho, lam)


def sample_perturbations(cfg: MppiConfig, T: int, rng: np.random.Generator) -> np.ndarray:
    std = np.sqrt(np.asarray(cfg.sigma))
    return rng.standard_normal((cfg.K, T, 2)) * std


def compute_weights(total_costs, lam: float) -> np.ndarray:
    """Gibbs weights ``exp(-C/lam)`` normalized to one, shifted by the minimum cost."""
    c = np.asarray(total_costs, dtype=float)
    if c.size == 0 or not np.all(np.isfinite(c)):
        raise DomainError("costs must be finite and non-empty")
    if not lam > 0:
        raise DomainError("lambda must be positive")
    e = np.exp(-(c - c.min()) / lam)
    return e / e.sum()


def control_update(nominal: np.ndarray, perturbations: np.ndarray, weights: np.ndarray) -> np.ndarray:
    nominal = np.asarray(nominal, dtype=float)
    eps = np.asarray(perturbations, dtype=float)
    w = np.asarray(weights, dtype=float)
    if eps.ndim != 3 or eps.shape[1:] != nominal.shape or eps.shape[0] != w.shape[0]:
        raise DomainError(f"shape mismatch: nominal {nominal.shape}, perturbations {eps.shape}, weights {w.shape}")
    return nominal + np.tensordot(w, eps, axes=1)


def evaluate_samples(x0, nominal, cfg: MppiConfig, env: EnvConfig, rng) -> MppiInstance:
    """Sample, roll out and score; everything of an iteration except the update."""
    nominal = np.asarray(nominal, dtype=float)
    if nominal.shape != (env.T, 2):
        raise DomainError(f"nominal must have shape ({env.T}, 2)")
    eps = sample_perturbations(cfg, env.T, rng)
    U = nominal[None] + eps
    _, goal, ctrl, viol = rollout_batch(x0, U, env)
    return MppiInstance.from_costs(eps, U, goal, ctrl, viol, cfg.rho, cfg.lam)


def mppi_iteration(x0, nominal, cfg: MppiConfig, env: EnvConfig, rng):
    """One MPPI iteration. Returns ``(u_star, instance)``; ``u_star`` is unclamped."""
    inst = evaluate_samples(x0, nominal, cfg, env, rng)
    return control_update(nominal, inst.perturbations, inst.weights), inst


def shift_nominal(controls: np.ndarray) -> np.ndarray:
    """Drop the first control and repeat the last one."""
    u = np.asarray(controls, dtype=float)
    return np.concatenate([u[1:], u[-1:]], axis=0)


def executed_control(u_star: np.ndarray, env: EnvConfig) -> np.ndarray:
    return clamp_controls(u_star[0], env)
