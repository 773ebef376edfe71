"""Offline phase: collect MPPI instances, fit their datamodels, train the predictor."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from .controller import initial_state
from .datamodel import FitConfig, denominator_cv, fit_instance
from .mppi import (MppiConfig, control_update, evaluate_samples, executed_control, make_rng,
                   shift_nominal)
from .predictor import TrainConfig, forward, r_squared, save, train
from .vehicle import DomainError, EnvConfig, clamp_controls, path_length, path_point, step

log = logging.getLogger(__name__)

DATASET_COLUMNS = ["instance", "sample", "C_k", "C_viol_k", "C_bar", "sigma_C", "theta"]


@dataclass
class StateDistribution:
    lateral_var: float = 1.0
    heading_var: float = 0.1
    speed_range: tuple = (0.5, 3.0)
    near_fraction: float = 0.3
    # half-width of the arc-length window around an obstacle for biased draws
    near_window: float = 2.5


@dataclass
class OfflineConfig:
    N: int = 200
    K: int = 100
    lam: float = 100.0
    sigma: tuple = (0.1, 0.5)
    rho0: float = 1e10
    fit: FitConfig = field(default_factory=FitConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    states: StateDistribution = field(default_factory=StateDistribution)
    # "iid" draws states from `states`; "closed-loop" records a standard-MPPI episode
    collection: str = "iid"
    seed: int = 0
    keep_fraction: float = 0.1

    def __post_init__(self):
        if int(self.N) < 1:
            raise DomainError("N must be >= 1")
        if self.rho0 < 0:
            raise DomainError("rho0 must be non-negative")
        if self.collection not in ("iid", "closed-loop"):
            raise DomainError(f"unknown collection mode {self.collection!r}")

    def mppi(self, K: Optional[int] = None) -> MppiConfig:
        return MppiConfig(K=self.K if K is None else K, lam=self.lam, sigma=self.sigma,
                          rho=self.rho0, seed=self.seed)


def _nearest_arclength(env: EnvConfig, point) -> float:
    wp = env.waypoints
    seg = np.roll(wp, -1, axis=0) - wp
    cum = np.concatenate([[0.0], np.cumsum(np.hypot(seg[:, 0], seg[:, 1]))])
    i = int(np.argmin(np.hypot(wp[:, 0] - point[0], wp[:, 1] - point[1])))
    return float(cum[i])


def sample_initial_state(env: EnvConfig, rng: np.random.Generator,
                         dist: StateDistribution = StateDistribution()) -> np.ndarray:
    """Path-relative random state; a share of draws lands beside an obstacle."""
    L = path_length(env.waypoints)
    near = len(env.obstacles) > 0 and rng.random() < dist.near_fraction
    if near:
        c = env.obstacles[rng.integers(len(env.obstacles))]
        s = _nearest_arclength(env, c[:2]) + rng.uniform(-dist.near_window, dist.near_window)
    else:
        s = rng.uniform(0.0, L)
    p, h = path_point(env.waypoints, s)
    normal = np.array([-math.sin(h), math.cos(h)])
    pos = p + normal * rng.normal(0.0, math.sqrt(dist.lateral_var))
    psi = h + rng.normal(0.0, math.sqrt(dist.heading_var))
    v = rng.uniform(*dist.speed_range)
    return np.array([pos[0], pos[1], math.atan2(math.sin(psi), math.cos(psi)), v])


@dataclass
class Dataset:
    instance: np.ndarray
    sample: np.ndarray
    features: np.ndarray  # (rows, 4)
    theta: np.ndarray
    n_degenerate: int = 0
    n_unconverged: int = 0
    n_subset_evals: int = 0
    n_lasso_solves: int = 0
    sparsity: List[float] = field(default_factory=list)
    concentration_cv: List[float] = field(default_factory=list)

    def __len__(self):
        return len(self.theta)


def collect_instances(cfg: OfflineConfig, env: EnvConfig):
    """The N MPPI instances, each from its own seed stream, zero nominal controls."""
    mcfg = cfg.mppi()
    if cfg.collection == "iid":
        out = []
        for i in range(cfg.N):
            rng = make_rng(cfg.seed, i)
            x0 = sample_initial_state(env, rng, cfg.states)
            out.append(evaluate_samples(x0, np.zeros((env.T, 2)), mcfg, env, rng))
        return out
    return closed_loop_instances(cfg.N, mcfg, env, seed=cfg.seed)


def closed_loop_instances(n: int, mcfg: MppiConfig, env: EnvConfig, seed: int = 0, stride: int = 10):
    """Instances recorded every ``stride`` iterations of standard-MPPI episodes."""
    out = []
    ep = 0
    while len(out) < n:
        rng = make_rng(seed, 1_000_000 + ep)
        recorded = []
        steps = stride * (n - len(out))
        x = initial_state(env, s0=rng.uniform(0, path_length(env.waypoints)))
        nominal = np.zeros((env.T, 2))
        for it in range(min(steps, 400)):
            inst = evaluate_samples(x, nominal, mcfg, env, rng)
            if it % stride == stride - 1:
                recorded.append(inst)
            u = control_update(nominal, inst.perturbations, inst.weights)
            x = step(x, executed_control(u, env), env)
            nominal = shift_nominal(clamp_controls(u, env))
        out.extend(recorded[: n - len(out)])
        ep += 1
    return out


def collect_and_fit(cfg: OfflineConfig, env: EnvConfig) -> Dataset:
    inst_ids, samp_ids, feats, thetas = [], [], [], []
    ds = Dataset(np.array([]), np.array([]), np.zeros((0, 4)), np.array([]))
    for i, inst in enumerate(collect_instances(cfg, env)):
        rng = make_rng(cfg.seed, i, 1)
        coef = fit_instance(inst.total, cfg.fit, cfg.lam, rng)
        ds.n_subset_evals += cfg.fit.M
        ds.n_lasso_solves += 0 if coef.degenerate else 1
        if coef.degenerate or not np.all(np.isfinite(coef.theta)):
            ds.n_degenerate += 1
            continue
        ds.n_unconverged += 0 if coef.converged else 1
        ds.sparsity.append(coef.sparsity)
        ds.concentration_cv.append(denominator_cv(inst.total, cfg.lam, cfg.fit.alpha, 1000, rng))
        K = inst.K
        inst_ids.append(np.full(K, i))
        samp_ids.append(np.arange(K))
        feats.append(np.column_stack([inst.total, inst.viol, np.full(K, inst.mean_cost),
                                      np.full(K, inst.std_cost)]))
        thetas.append(coef.theta)
    if feats:
        ds.instance = np.concatenate(inst_ids)
        ds.sample = np.concatenate(samp_ids)
        ds.features = np.concatenate(feats)
        ds.theta = np.concatenate(thetas)
    return ds


def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_dataset(path, ds: Dataset, comments=()):
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(DATASET_COLUMNS)
        for i in range(len(ds)):
            w.writerow([int(ds.instance[i]), int(ds.sample[i])]
                       + [_fmt(v) for v in ds.features[i]] + [_fmt(ds.theta[i])])


def read_dataset(path) -> Dataset:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    if not rows or rows[0] != DATASET_COLUMNS:
        raise DomainError(f"{path}: unexpected dataset header {rows[0] if rows else None}")
    body = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, len(DATASET_COLUMNS))
    return Dataset(body[:, 0].astype(int), body[:, 1].astype(int), body[:, 2:6], body[:, 6])


def calibrate_tau(model, features, keep_fraction: float = 0.1) -> float:
    """Threshold that keeps ``keep_fraction`` of the dataset's samples."""
    a = np.abs(forward(model, features))
    return float(np.quantile(a, 1.0 - keep_fraction))


def run_offline(cfg: OfflineConfig, env: EnvConfig, out_dir=None, comments=()):
    """Collect, fit and train. Returns ``(model, report, dataset, train_result)``.

    With ``out_dir`` set, writes ``dataset.csv``, ``model.bin``,
    ``train_log.csv`` and ``report.json`` there.
    """
    ds = collect_and_fit(cfg, env)
    if len(ds) < 2:
        raise DomainError(f"only {len(ds)} usable dataset rows")
    tr = train(ds.features, ds.theta, cfg.train, make_rng(cfg.seed, 2**31))
    model = tr.model
    pred = forward(model, ds.features)
    tau = calibrate_tau(model, ds.features, cfg.keep_fraction)
    vi = tr.val_index
    report = {
        "rows": len(ds),
        "instances": cfg.N,
        "degenerate_instances": ds.n_degenerate,
        "unconverged_fits": ds.n_unconverged,
        "subset_evaluations": ds.n_subset_evals,
        "lasso_solves": ds.n_lasso_solves,
        "theta_sparsity_mean": float(np.mean(ds.sparsity)) if ds.sparsity else float("nan"),
        "concentration_cv_mean": float(np.mean(ds.concentration_cv)) if ds.concentration_cv else float("nan"),
        "train_r2": r_squared(pred, ds.theta),
        "val_r2": r_squared(pred[vi], ds.theta[vi]) if vi.size > 1 else float("nan"),
        "best_epoch": tr.best_epoch,
        "tau": tau,
        "keep_fraction": cfg.keep_fraction,
    }
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_dataset(os.path.join(out_dir, "dataset.csv"), ds, comments)
        save(model, os.path.join(out_dir, "model.bin"))
        with open(os.path.join(out_dir, "train_log.csv"), "w") as fh:
            for line in comments:
                fh.write(f"# {line}\n")
            fh.write("epoch,train_loss,val_loss\n")
            for e, (a, b) in enumerate(zip(tr.train_loss, tr.val_loss)):
                fh.write(f"{e},{_fmt(a)},{_fmt(b)}\n")
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            json.dump({"report": report, "config": _config_dict(cfg)}, fh, indent=2, sort_keys=True)
    return model, report, ds, tr


def _config_dict(cfg: OfflineConfig) -> dict:
    d = asdict(cfg)
    return json.loads(json.dumps(d, default=float))
