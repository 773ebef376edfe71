"""Datamodel-guided MPPI: predicted-influence pruning and adaptive violation penalty."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .mppi import (MppiConfig, compute_weights, control_update, evaluate_samples,
                   executed_control, make_rng, shift_nominal)
from .predictor import PredictorModel, forward, instance_features
from .vehicle import DomainError, EnvConfig, clamp_controls, path_point, step, tracking_metrics

MODES = ("standard", "dm-fixed", "dm-adaptive")


@dataclass
class OnlineConfig:
    tau: float = 0.0
    r_target: float = 0.05
    eta: float = 1e9
    rho_min: float = 0.0
    rho_max: float = 1e12
    rho0: float = 1e10
    adaptive: bool = False

    def __post_init__(self):
        if self.tau < 0 or self.eta < 0:
            raise DomainError("tau and eta must be non-negative")
        if not 0.0 < self.r_target < 1.0:
            raise DomainError("r_target must lie in (0, 1)")
        if not self.rho_min <= self.rho0 <= self.rho_max:
            raise DomainError("initial rho outside [rho_min, rho_max]")


@dataclass
class IterationDiagnostics:
    kept: int
    r_viol: float
    rho: float
    k_eff: float
    ms: float


def predict_all(model: PredictorModel, instance) -> np.ndarray:
    feats = instance_features(instance)
    if model.dims[0] != feats.shape[1]:
        raise DomainError(f"model expects {model.dims[0]} features, instance provides {feats.shape[1]}")
    return forward(model, feats)


def prune(theta_hat, tau: float) -> np.ndarray:
    """Indices with ``|theta_hat| >= tau``; never empty (falls back to the argmax)."""
    a = np.abs(np.asarray(theta_hat, dtype=float))
    keep = np.flatnonzero(a >= tau)
    if keep.size == 0:
        keep = np.array([int(np.argmax(a))])
    return keep


def violation_ratio(theta_hat, viol_costs) -> float:
    a = np.abs(np.asarray(theta_hat, dtype=float))
    den = a.sum()
    if den == 0.0:
        return 0.0
    return float(a[np.asarray(viol_costs) > 0].sum() / den)


def adapt_rho(rho: float, r_viol: float, cfg: OnlineConfig) -> float:
    if not cfg.adaptive:
        return rho
    return float(np.clip(rho + cfg.eta * (r_viol - cfg.r_target), cfg.rho_min, cfg.rho_max))


def pruned_control(instance, keep, nominal, lam: float) -> np.ndarray:
    """MPPI update with Gibbs weights renormalized over the kept samples only."""
    keep = np.asarray(keep, dtype=int)
    if keep.size == 0:
        raise DomainError("empty keep set")
    w = compute_weights(instance.total[keep], lam)
    return control_update(nominal, instance.perturbations[keep], w)


def effective_influence_size(theta_hat) -> float:
    """Participation ratio ``(sum |theta|)^2 / sum theta^2``; K when all zero."""
    a = np.abs(np.asarray(theta_hat, dtype=float))
    s2 = np.sum(a * a)
    if s2 == 0.0:
        return float(a.size)
    return float(a.sum() ** 2 / s2)


@dataclass
class EpisodeResult:
    states: np.ndarray  # (steps+1, 4)
    controls: np.ndarray  # (steps, 2) executed
    diagnostics: List[IterationDiagnostics] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)


def initial_state(env: EnvConfig, s0: float = 0.0, speed: Optional[float] = None) -> np.ndarray:
    p, h = path_point(env.waypoints, s0)
    return np.array([p[0], p[1], h, env.target_speed if speed is None else speed])


def run_episode(env: EnvConfig, mppi_cfg: MppiConfig, online: OnlineConfig, model: Optional[PredictorModel],
                steps: int, mode: str = "standard", rng=None, x0=None) -> EpisodeResult:
    """Closed-loop receding-horizon episode in one of the three modes.

    ``standard`` ignores ``model`` and runs plain MPPI at ``mppi_cfg.rho``;
    ``dm-fixed`` prunes at ``online.tau`` with rho held at ``online.rho0``;
    ``dm-adaptive`` also adapts rho every iteration. The penalty used to
    score an iteration's samples is the one left by the previous iteration.
    """
    if mode not in MODES:
        raise DomainError(f"unknown mode {mode!r}")
    if mode != "standard" and model is None:
        raise DomainError(f"mode {mode} needs a predictor model")
    if rng is None:
        rng = make_rng(mppi_cfg.seed)
    x = initial_state(env) if x0 is None else np.asarray(x0, dtype=float)
    nominal = np.zeros((env.T, 2))
    online = replace(online, adaptive=(mode == "dm-adaptive"))
    rho = mppi_cfg.rho if mode == "standard" else online.rho0
    states = [x]
    executed = []
    diags = []
    for _ in range(int(steps)):
        t0 = time.perf_counter()
        cfg = replace(mppi_cfg, rho=rho) if rho != mppi_cfg.rho else mppi_cfg
        inst = evaluate_samples(x, nominal, cfg, env, rng)
        if mode == "standard":
            u_star = control_update(nominal, inst.perturbations, inst.weights)
            ms = 1e3 * (time.perf_counter() - t0)
            diags.append(IterationDiagnostics(inst.K, float("nan"), rho, float("nan"), ms))
        else:
            theta_hat = predict_all(model, inst)
            keep = prune(theta_hat, online.tau)
            r_viol = violation_ratio(theta_hat, inst.viol)
            rho_used = rho
            rho = adapt_rho(rho, r_viol, online)
            u_star = pruned_control(inst, keep, nominal, cfg.lam)
            ms = 1e3 * (time.perf_counter() - t0)
            diags.append(IterationDiagnostics(int(keep.size), r_viol, rho_used,
                                              effective_influence_size(theta_hat), ms))
        u0 = executed_control(u_star, env)
        x = step(x, u0, env)
        nominal = shift_nominal(clamp_controls(u_star, env))
        states.append(x)
        executed.append(u0)
    states = np.array(states)
    res = EpisodeResult(states, np.array(executed).reshape(-1, 2), diags)
    res.metrics = episode_metrics(res, env)
    return res


def episode_metrics(res: EpisodeResult, env: EnvConfig) -> dict:
    pos_rmse, head_rmse, min_dist = tracking_metrics(res.states, env)
    d = res.diagnostics
    r = np.array([x.r_viol for x in d]) if d else np.array([])
    half = r[len(r) // 2:]
    return {
        "position_rmse": pos_rmse,
        "heading_rmse": head_rmse,
        "min_obstacle_dist": min_dist,
        "mean_r_viol": float(np.nanmean(r)) if r.size and np.isfinite(r).any() else float("nan"),
        "final_half_r_viol": float(np.nanmean(half)) if half.size and np.isfinite(half).any() else float("nan"),
        "mean_iter_ms": float(np.mean([x.ms for x in d])) if d else float("nan"),
        "mean_kept": float(np.mean([x.kept for x in d])) if d else float("nan"),
        "mean_k_eff": float(np.nanmean([x.k_eff for x in d])) if d and np.isfinite([x.k_eff for x in d]).any() else float("nan"),
        "final_rho": float(d[-1].rho) if d else float("nan"),
    }
