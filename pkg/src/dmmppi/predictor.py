"""Influence predictor: a small ReLU MLP from cost features to influence,
trained with Adam on z-scored inputs and targets."""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .vehicle import DomainError

log = logging.getLogger(__name__)

N_FEATURES = 4
FEATURE_NAMES = ("C_k", "C_viol_k", "C_bar", "sigma_C")
MAGIC = b"DMMPPI-MLP"
FORMAT_VERSION = 1
STD_FLOOR = 1e-12


class ModelFormatError(ValueError):
    pass


class TrainingError(RuntimeError):
    def __init__(self, msg, batch_indices=None):
        super().__init__(msg)
        self.batch_indices = batch_indices


@dataclass
class PredictorModel:
    dims: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float = 0.0
    y_std: float = 1.0

    def __post_init__(self):
        self.dims = [int(d) for d in self.dims]
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        self.x_mean = np.asarray(self.x_mean, dtype=float)
        self.x_std = np.maximum(np.asarray(self.x_std, dtype=float), STD_FLOOR)
        self.y_mean = float(self.y_mean)
        self.y_std = max(float(self.y_std), STD_FLOOR)
        n = len(self.dims) - 1
        if n < 1 or len(self.weights) != n or len(self.biases) != n:
            raise DomainError("layer count does not match dims")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.dims[i], self.dims[i + 1]) or b.shape != (self.dims[i + 1],):
                raise DomainError(f"layer {i} has shape {w.shape}/{b.shape}, dims say {self.dims[i:i + 2]}")
        if self.dims[-1] != 1:
            raise DomainError("output layer must have one unit")
        if self.x_mean.shape != (self.dims[0],) or self.x_std.shape != (self.dims[0],):
            raise DomainError("normalization vectors do not match input width")

    @classmethod
    def init(cls, dims: Sequence[int], rng: np.random.Generator, x_mean=None, x_std=None,
             y_mean=0.0, y_std=1.0) -> "PredictorModel":
        """He-uniform weights, zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            limit = np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        d0 = dims[0]
        return cls(list(dims), weights, biases,
                   np.zeros(d0) if x_mean is None else x_mean,
                   np.ones(d0) if x_std is None else x_std, y_mean, y_std)

    @property
    def params(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "PredictorModel":
        return PredictorModel(list(self.dims), [w.copy() for w in self.weights],
                              [b.copy() for b in self.biases], self.x_mean.copy(),
                              self.x_std.copy(), self.y_mean, self.y_std)


def _hidden_pass(model: PredictorModel, z: np.ndarray):
    acts = [z]
    h = z
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return acts


def forward(model: PredictorModel, features) -> np.ndarray:
    """Predicted influence for one feature row ``(4,)`` or a batch ``(N, 4)``."""
    x = np.asarray(features, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != model.dims[0]:
        raise DomainError(f"expected {model.dims[0]} features, got {x.shape[1]}")
    z = (x - model.x_mean) / model.x_std
    out = _hidden_pass(model, z)[-1][:, 0] * model.y_std + model.y_mean
    return float(out[0]) if single else out


def backward(model: PredictorModel, features, targets):
    """Mean squared error in normalized target space and its exact gradient.

    Gradients come back in the order of :attr:`PredictorModel.params`.
    """
    x = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(targets, dtype=float).reshape(-1)
    if len(x) == 0:
        raise DomainError("empty batch")
    z = (x - model.x_mean) / model.x_std
    t = (y - model.y_mean) / model.y_std
    acts = _hidden_pass(model, z)
    n = len(x)
    err = acts[-1][:, 0] - t
    loss = float(np.mean(err ** 2))
    delta = (2.0 / n) * err[:, None]
    grads = []
    for i in range(len(model.weights) - 1, -1, -1):
        gw = acts[i].T @ delta
        gb = delta.sum(axis=0)
        grads = [gw, gb] + grads
        if i > 0:
            delta = (delta @ model.weights[i].T) * (acts[i] > 0.0)
    return loss, grads


@dataclass
class TrainConfig:
    epochs: int = 1000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 256
    seed: int = 0
    val_fraction: float = 0.1
    hidden: tuple = (64, 64)

    def __post_init__(self):
        if int(self.epochs) < 1:
            raise DomainError("epochs must be >= 1")
        if not self.lr > 0:
            raise DomainError("learning rate must be positive")


@dataclass
class TrainResult:
    model: PredictorModel
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    initial_val_loss: float = float("nan")
    best_epoch: int = 0
    # rows held out for validation; empty when val_fraction is 0
    val_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


def _mse(model, x, y) -> float:
    t = (y - model.y_mean) / model.y_std
    z = (x - model.x_mean) / model.x_std
    return float(np.mean((_hidden_pass(model, z)[-1][:, 0] - t) ** 2))


def train(features, targets, cfg: TrainConfig, rng: np.random.Generator = None) -> TrainResult:
    """Adam on shuffled mini-batches; keeps the best-validation parameters."""
    x = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float).reshape(-1)
    if len(x) < 2:
        raise DomainError("need at least 2 rows (one to train on, one to validate)")
    if rng is None:
        rng = np.random.Generator(np.random.Philox(cfg.seed))
    order = rng.permutation(len(x))
    n_val = max(1, int(round(cfg.val_fraction * len(x)))) if cfg.val_fraction > 0 else 0
    val_idx, tr_idx = order[:n_val], order[n_val:]
    xt, yt = x[tr_idx], y[tr_idx]
    xv, yv = (x[val_idx], y[val_idx]) if n_val else (xt, yt)

    model = PredictorModel.init([x.shape[1], *cfg.hidden, 1], rng,
                                xt.mean(axis=0), xt.std(axis=0), yt.mean(), yt.std())
    params = model.params
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    res = TrainResult(model.copy(), initial_val_loss=_mse(model, xv, yv), val_index=np.sort(val_idx))
    best = res.initial_val_loss
    step = 0
    bs = int(cfg.batch_size)
    for epoch in range(int(cfg.epochs)):
        perm = rng.permutation(len(xt))
        total = 0.0
        for start in range(0, len(xt), bs):
            idx = perm[start:start + bs]
            loss, grads = backward(model, xt[idx], yt[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch starting {start}",
                                    batch_indices=tr_idx[idx])
            total += loss * len(idx)
            step += 1
            c1 = 1.0 - cfg.beta1 ** step
            c2 = 1.0 - cfg.beta2 ** step
            for p, g, mi, vi in zip(params, grads, m, v):
                mi *= cfg.beta1
                mi += (1.0 - cfg.beta1) * g
                vi *= cfg.beta2
                vi += (1.0 - cfg.beta2) * g * g
                p -= cfg.lr * (mi / c1) / (np.sqrt(vi / c2) + cfg.eps)
        val = _mse(model, xv, yv)
        res.train_loss.append(total / len(xt))
        res.val_loss.append(val)
        if val < best:
            best = val
            res.model = model.copy()
            res.best_epoch = epoch
    log.info("trained %d epochs, best val %.4g at epoch %d", cfg.epochs, best, res.best_epoch)
    return res


def r_squared(pred, target) -> float:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    ss = np.sum((target - target.mean()) ** 2)
    return float(1.0 - np.sum((target - pred) ** 2) / ss) if ss > 0 else float("nan")


def save(model: PredictorModel, path) -> None:
    """Binary model file, little-endian throughout.

    ``DMMPPI-MLP``, a version byte, the number of dims and each dim as
    uint32, then float64 weights (row-major) and biases per layer, input
    mean and std, target mean and std.
    """
    buf = bytearray(MAGIC)
    buf += struct.pack("<B", FORMAT_VERSION)
    buf += struct.pack("<I", len(model.dims))
    buf += struct.pack(f"<{len(model.dims)}I", *model.dims)
    for w, b in zip(model.weights, model.biases):
        buf += np.ascontiguousarray(w, dtype="<f8").tobytes()
        buf += np.ascontiguousarray(b, dtype="<f8").tobytes()
    buf += np.ascontiguousarray(model.x_mean, dtype="<f8").tobytes()
    buf += np.ascontiguousarray(model.x_std, dtype="<f8").tobytes()
    buf += struct.pack("<2d", model.y_mean, model.y_std)
    with open(path, "wb") as fh:
        fh.write(bytes(buf))


def load(path) -> PredictorModel:
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise ModelFormatError(f"truncated model file: need {n} bytes for {what} at offset {pos}, "
                                   f"file has {len(data)}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(len(MAGIC), "magic") != MAGIC:
        raise ModelFormatError("bad magic header: not a DMMPPI-MLP model file (version mismatch)")
    (version,) = struct.unpack("<B", take(1, "version"))
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version}, expected {FORMAT_VERSION}")
    (n_dims,) = struct.unpack("<I", take(4, "dim count"))
    if n_dims < 2 or n_dims > 64:
        raise ModelFormatError(f"implausible dim count {n_dims} at offset {pos - 4}")
    dims = list(struct.unpack(f"<{n_dims}I", take(4 * n_dims, "dims")))

    def floats(n, what):
        return np.frombuffer(take(8 * n, what), dtype="<f8").astype(float)

    weights, biases = [], []
    for i in range(n_dims - 1):
        weights.append(floats(dims[i] * dims[i + 1], f"layer {i} weights").reshape(dims[i], dims[i + 1]))
        biases.append(floats(dims[i + 1], f"layer {i} biases"))
    x_mean = floats(dims[0], "input mean")
    x_std = floats(dims[0], "input std")
    y_mean, y_std = floats(2, "target stats")
    if pos != len(data):
        raise ModelFormatError(f"{len(data) - pos} trailing bytes after offset {pos}")
    try:
        return PredictorModel(dims, weights, biases, x_mean, x_std, y_mean, y_std)
    except DomainError as exc:
        raise ModelFormatError(str(exc)) from exc


def instance_features(instance) -> np.ndarray:
    """``(K, 4)`` rows of (C_k, C_viol_k, C_bar, sigma_C) for one MPPI instance."""
    K = instance.K
    return np.column_stack([instance.total, instance.viol,
                            np.full(K, instance.mean_cost), np.full(K, instance.std_cost)])
