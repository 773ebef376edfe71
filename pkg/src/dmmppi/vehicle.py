"""Kinematic bicycle path-tracking environment with circular obstacles.

States are handled as float arrays ``[px, py, psi, v]`` (shape ``(4,)`` or
``(..., 4)``) so a whole batch of rollouts advances in one numpy call.
:class:`VehicleState` and :class:`ControlInput` are thin named views for
callers that prefer fields.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numba
import numpy as np


class DomainError(ValueError):
    """Raised when an input violates an operation's domain."""


@dataclass(frozen=True)
class VehicleState:
    px: float
    py: float
    psi: float
    v: float

    def as_array(self) -> np.ndarray:
        return np.array([self.px, self.py, self.psi, self.v], dtype=float)

    @classmethod
    def from_array(cls, x) -> "VehicleState":
        x = np.asarray(x, dtype=float)
        return cls(float(x[0]), float(x[1]), float(x[2]), float(x[3]))


@dataclass(frozen=True)
class ControlInput:
    delta: float
    a: float

    def as_array(self) -> np.ndarray:
        return np.array([self.delta, self.a], dtype=float)


class CostBreakdown(NamedTuple):
    goal: float
    ctrl: float
    viol: float

    def total(self, rho: float) -> float:
        return self.goal + self.ctrl + rho * self.viol


def wrap_angle(a):
    """Wrap angles to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2.0 * np.pi)


def stadium_path(radius: float = 10.0, straight: float = 20.0, spacing: float = 0.5) -> np.ndarray:
    """Counter-clockwise stadium curve starting at the left end of the bottom straight.

    Two straights of length ``straight`` joined by semicircles of ``radius``,
    sampled every ``spacing`` metres of arc length. Returns ``(P, 2)`` waypoints;
    the path is closed (last point connects back to the first).
    """
    half = straight / 2.0
    total = 2.0 * straight + 2.0 * math.pi * radius
    n = int(round(total / spacing))
    s = np.arange(n) * (total / n)
    pts = np.empty((n, 2))
    arc = math.pi * radius
    for i, si in enumerate(s):
        if si < straight:
            pts[i] = (-half + si, -radius)
        elif si < straight + arc:
            ang = -math.pi / 2 + (si - straight) / radius
            pts[i] = (half + radius * math.cos(ang), radius * math.sin(ang))
        elif si < 2 * straight + arc:
            pts[i] = (half - (si - straight - arc), radius)
        else:
            ang = math.pi / 2 + (si - 2 * straight - arc) / radius
            pts[i] = (-half + radius * math.cos(ang), radius * math.sin(ang))
    return pts


def path_point(waypoints: np.ndarray, s: float):
    """Point and tangent heading at arc length ``s`` along the closed polyline."""
    seg = np.roll(waypoints, -1, axis=0) - waypoints
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    s = float(s) % cum[-1]
    i = int(np.searchsorted(cum, s, side="right") - 1)
    i = min(i, len(waypoints) - 1)
    frac = (s - cum[i]) / seg_len[i]
    p = waypoints[i] + frac * seg[i]
    return p, math.atan2(seg[i, 1], seg[i, 0])


def path_length(waypoints: np.ndarray) -> float:
    seg = np.roll(waypoints, -1, axis=0) - waypoints
    return float(np.hypot(seg[:, 0], seg[:, 1]).sum())


def default_obstacles(radius: float = 1.5, offset: float = 1.95) -> np.ndarray:
    """Three obstacles centred ``offset`` metres off the default path.

    With the defaults each edge sits 0.45 m from the centreline, so a vehicle
    tracking the path closely clears them while sampled rollouts that drift
    towards them are penalized.

    Placed on the bottom straight (inside), the right bend (outside) and the
    top straight (inside), in the order the vehicle meets them.
    """
    return np.array([
        [0.0, -10.0 + offset, radius],
        [10.0 + (10.0 + offset) * math.cos(math.radians(-20)),
         (10.0 + offset) * math.sin(math.radians(-20)), radius],
        [2.0, 10.0 - offset, radius],
    ])


@dataclass
class EnvConfig:
    wheelbase: float = 2.5
    dt: float = 0.1
    T: int = 20
    waypoints: np.ndarray = field(default_factory=stadium_path)
    # rows of (cx, cy, radius)
    obstacles: np.ndarray = field(default_factory=default_obstacles)
    R: np.ndarray = field(default_factory=lambda: np.diag([1.0, 0.1]))
    # stage weights: position, heading, speed
    goal_weights: tuple = (20.0, 10.0, 2.0)
    terminal_scale: float = 5.0
    target_speed: float = 2.0
    # scale on the squared penetration depth; the MPPI rho multiplies on top
    viol_weight: float = 1e-8
    delta_max: float = 0.5
    a_max: float = 3.0

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=float).reshape(-1, 2)
        self.obstacles = np.asarray(self.obstacles, dtype=float).reshape(-1, 3)
        self.R = np.asarray(self.R, dtype=float).reshape(2, 2)
        self.goal_weights = tuple(float(w) for w in self.goal_weights)
        self.validate()
        seg = np.roll(self.waypoints, -1, axis=0) - self.waypoints
        self._seg = seg
        self._seg_len2 = np.maximum((seg ** 2).sum(axis=1), 1e-300)
        self._seg_heading = np.arctan2(seg[:, 1], seg[:, 0])
        self._wp_norm2 = (self.waypoints ** 2).sum(axis=1)

    def validate(self):
        if not self.dt > 0:
            raise DomainError("dt must be positive")
        if int(self.T) < 1:
            raise DomainError("horizon T must be >= 1")
        if len(self.waypoints) < 3:
            raise DomainError("reference path needs at least 3 waypoints")
        if np.any(self.obstacles[:, 2] <= 0):
            raise DomainError("obstacle radii must be positive")
        if not np.allclose(self.R, self.R.T) or np.any(np.linalg.eigvalsh(self.R) <= 0):
            raise DomainError("control-cost matrix R must be symmetric positive definite")
        if len(self.goal_weights) != 3:
            raise DomainError("goal_weights needs (position, heading, speed)")
        if self.delta_max <= 0 or self.a_max <= 0:
            raise DomainError("control bounds must be positive")

    @property
    def bounds(self) -> np.ndarray:
        return np.array([self.delta_max, self.a_max])


def clamp_controls(u, cfg: EnvConfig) -> np.ndarray:
    b = cfg.bounds
    return np.clip(u, -b, b)


def step(state, control, cfg: EnvConfig) -> np.ndarray:
    """One forward-Euler step of the kinematic bicycle.

    Works on single states ``(4,)`` or batches ``(..., 4)`` with matching
    controls ``(..., 2)``. Controls are used as given; clamp beforehand.
    """
    x = state.as_array() if isinstance(state, VehicleState) else np.asarray(state, dtype=float)
    u = control.as_array() if isinstance(control, ControlInput) else np.asarray(control, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError("non-finite vehicle state")
    px, py, psi, v = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    delta, a = u[..., 0], u[..., 1]
    dt = cfg.dt
    out = np.empty(np.broadcast_shapes(x.shape, u.shape[:-1] + (4,)))
    out[..., 0] = px + v * np.cos(psi) * dt
    out[..., 1] = py + v * np.sin(psi) * dt
    out[..., 2] = wrap_angle(psi + (v / cfg.wheelbase) * np.tan(delta) * dt)
    out[..., 3] = v + a * dt
    return out


def path_errors(pos: np.ndarray, cfg: EnvConfig):
    """Distance to the reference polyline and tangent heading at the closest point.

    Nearest waypoint by linear scan, then exact projection onto its two
    adjacent segments. ``pos`` is ``(N, 2)``.
    """
    pos = np.asarray(pos, dtype=float).reshape(-1, 2)
    wp = cfg.waypoints
    P = len(wp)
    d2 = (pos ** 2).sum(axis=1)[:, None] - 2.0 * pos @ wp.T + cfg._wp_norm2[None, :]
    i = np.argmin(d2, axis=1)
    best_d2 = np.full(len(pos), np.inf)
    best_head = np.zeros(len(pos))
    for j in ((i - 1) % P, i):
        rel = pos - wp[j]
        t = np.clip((rel * cfg._seg[j]).sum(axis=1) / cfg._seg_len2[j], 0.0, 1.0)
        diff = rel - t[:, None] * cfg._seg[j]
        dd = (diff ** 2).sum(axis=1)
        better = dd < best_d2
        best_d2 = np.where(better, dd, best_d2)
        best_head = np.where(better, cfg._seg_heading[j], best_head)
    return np.sqrt(best_d2), best_head


def stage_cost(states: np.ndarray, cfg: EnvConfig, scale: float = 1.0) -> np.ndarray:
    """Weighted squared path distance, heading error and speed error, per state."""
    s = np.asarray(states, dtype=float)
    flat = s.reshape(-1, 4)
    dist, head = path_errors(flat[:, :2], cfg)
    herr = wrap_angle(flat[:, 2] - head)
    verr = flat[:, 3] - cfg.target_speed
    wp, wh, wv = cfg.goal_weights
    q = scale * (wp * dist ** 2 + wh * herr ** 2 + wv * verr ** 2)
    return q.reshape(s.shape[:-1])


def violation_cost_at(state, cfg: EnvConfig):
    """Summed squared penetration depth into the obstacles, times ``viol_weight``.

    Zero outside every obstacle (and exactly on a boundary).
    """
    x = state.as_array() if isinstance(state, VehicleState) else np.asarray(state, dtype=float)
    if len(cfg.obstacles) == 0:
        return np.zeros(x.shape[:-1]) if x.ndim > 1 else 0.0
    dx = x[..., None, 0] - cfg.obstacles[:, 0]
    dy = x[..., None, 1] - cfg.obstacles[:, 1]
    pen = np.maximum(0.0, cfg.obstacles[:, 2] - np.hypot(dx, dy))
    c = cfg.viol_weight * (pen ** 2).sum(axis=-1)
    return float(c) if x.ndim == 1 else c


@numba.njit(cache=True)
def _rollout_kernel(x0, U, dt, L, wp, seg, seg_len2, seg_head, obst, weights, term_scale,
                    v_ref, R, viol_weight):
    K, T = U.shape[0], U.shape[1]
    P = wp.shape[0]
    n_obs = obst.shape[0]
    states = np.empty((K, T + 1, 4))
    goal = np.zeros(K)
    ctrl = np.zeros(K)
    viol = np.zeros(K)
    two_pi = 2.0 * np.pi
    for k in range(K):
        px, py, psi, v = x0[0], x0[1], x0[2], x0[3]
        states[k, 0, 0] = px
        states[k, 0, 1] = py
        states[k, 0, 2] = psi
        states[k, 0, 3] = v
        for t in range(T + 1):
            # nearest waypoint by linear scan, then project on both adjacent segments
            best = np.inf
            ib = 0
            for j in range(P):
                dx = px - wp[j, 0]
                dy = py - wp[j, 1]
                d2 = dx * dx + dy * dy
                if d2 < best:
                    best = d2
                    ib = j
            dmin = np.inf
            head = 0.0
            for j in ((ib - 1) % P, ib):
                rx = px - wp[j, 0]
                ry = py - wp[j, 1]
                s = (rx * seg[j, 0] + ry * seg[j, 1]) / seg_len2[j]
                if s < 0.0:
                    s = 0.0
                elif s > 1.0:
                    s = 1.0
                ex = rx - s * seg[j, 0]
                ey = ry - s * seg[j, 1]
                dd = ex * ex + ey * ey
                if dd < dmin:
                    dmin = dd
                    head = seg_head[j]
            herr = np.pi - ((np.pi - (psi - head)) % two_pi)
            verr = v - v_ref
            q = weights[0] * dmin + weights[1] * herr * herr + weights[2] * verr * verr
            if t == T:
                goal[k] += term_scale * q
                break
            goal[k] += q
            for o in range(n_obs):
                pen = obst[o, 2] - np.sqrt((px - obst[o, 0]) ** 2 + (py - obst[o, 1]) ** 2)
                if pen > 0.0:
                    viol[k] += viol_weight * pen * pen
            d = U[k, t, 0]
            a = U[k, t, 1]
            ctrl[k] += 0.5 * (R[0, 0] * d * d + (R[0, 1] + R[1, 0]) * d * a + R[1, 1] * a * a)
            npx = px + v * np.cos(psi) * dt
            npy = py + v * np.sin(psi) * dt
            npsi = psi + (v / L) * np.tan(d) * dt
            npsi = np.pi - ((np.pi - npsi) % two_pi)
            v = v + a * dt
            px, py, psi = npx, npy, npsi
            states[k, t + 1, 0] = px
            states[k, t + 1, 1] = py
            states[k, t + 1, 2] = psi
            states[k, t + 1, 3] = v
    return states, goal, ctrl, viol


def rollout_batch(x0, controls: np.ndarray, cfg: EnvConfig):
    """Roll out ``K`` control sequences ``(K, T, 2)`` from a shared start state.

    Controls are clamped to the bounds first. Returns ``(states, goal, ctrl,
    viol)`` with states ``(K, T+1, 4)`` and per-sample cost components.
    Compiled equivalent of :func:`step` + :func:`stage_cost` +
    :func:`violation_cost_at`; the numpy versions stay the reference.
    """
    x0 = x0.as_array() if isinstance(x0, VehicleState) else np.asarray(x0, dtype=float)
    U = np.asarray(controls, dtype=float)
    if U.ndim != 3 or U.shape[1] != cfg.T or U.shape[2] != 2:
        raise DomainError(f"controls must have shape (K, {cfg.T}, 2), got {U.shape}")
    if x0.shape != (4,) or not np.all(np.isfinite(x0)):
        raise DomainError("non-finite vehicle state")
    U = np.ascontiguousarray(clamp_controls(U, cfg))
    return _rollout_kernel(x0, U, float(cfg.dt), float(cfg.wheelbase), cfg.waypoints, cfg._seg,
                           cfg._seg_len2, cfg._seg_heading, cfg.obstacles,
                           np.asarray(cfg.goal_weights), float(cfg.terminal_scale),
                           float(cfg.target_speed), cfg.R, float(cfg.viol_weight))


def rollout_batch_reference(x0, controls: np.ndarray, cfg: EnvConfig):
    """Pure-numpy rollout built from :func:`step` and the cost functions."""
    x0 = x0.as_array() if isinstance(x0, VehicleState) else np.asarray(x0, dtype=float)
    U = clamp_controls(np.asarray(controls, dtype=float), cfg)
    K, T = U.shape[0], cfg.T
    states = np.empty((K, T + 1, 4))
    states[:, 0] = x0
    for t in range(T):
        states[:, t + 1] = step(states[:, t], U[:, t], cfg)
    goal = stage_cost(states[:, :T], cfg).sum(axis=1)
    goal = goal + stage_cost(states[:, T], cfg, scale=cfg.terminal_scale)
    ctrl = 0.5 * np.einsum("kti,ij,ktj->k", U, cfg.R, U)
    viol = violation_cost_at(states[:, :T], cfg).sum(axis=1) if len(cfg.obstacles) else np.zeros(K)
    return states, goal, ctrl, viol


def rollout(x0, controls, cfg: EnvConfig):
    """Single-trajectory rollout: ``(states (T+1, 4), CostBreakdown)``."""
    U = np.array([c.as_array() if isinstance(c, ControlInput) else c for c in controls], dtype=float)
    if U.ndim != 2 or len(U) != cfg.T:
        raise DomainError(f"expected {cfg.T} controls, got {len(U)}")
    states, goal, ctrl, viol = rollout_batch(x0, U[None], cfg)
    return states[0], CostBreakdown(float(goal[0]), float(ctrl[0]), float(viol[0]))


def obstacle_clearance(positions: np.ndarray, cfg: EnvConfig) -> np.ndarray:
    """Signed distance from each position to the nearest obstacle edge."""
    pos = np.asarray(positions, dtype=float).reshape(-1, 2)
    if len(cfg.obstacles) == 0:
        return np.full(len(pos), np.inf)
    d = np.hypot(pos[:, None, 0] - cfg.obstacles[:, 0], pos[:, None, 1] - cfg.obstacles[:, 1])
    return (d - cfg.obstacles[:, 2]).min(axis=1)


def tracking_metrics(states, cfg: EnvConfig):
    """``(position_rmse, heading_rmse, min_obstacle_dist)`` for a state sequence."""
    s = np.array([x.as_array() if isinstance(x, VehicleState) else x for x in states], dtype=float)
    if s.size == 0:
        raise DomainError("empty state sequence")
    s = s.reshape(-1, 4)
    dist, head = path_errors(s[:, :2], cfg)
    herr = wrap_angle(s[:, 2] - head)
    return (
        float(np.sqrt(np.mean(dist ** 2))),
        float(np.sqrt(np.mean(herr ** 2))),
        float(obstacle_clearance(s[:, :2], cfg).min()),
    )


TRAJECTORY_HEADER = ["t", "px", "py", "psi", "v", "delta", "a"]


def write_trajectory_csv(path, states: np.ndarray, controls: np.ndarray, dt: float,
                         comments: Sequence[str] = ()):
    """One row per executed step: the state at time t and the control applied there."""
    states = np.asarray(states, dtype=float).reshape(-1, 4)
    controls = np.asarray(controls, dtype=float).reshape(-1, 2)
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_HEADER)
        for t in range(len(controls)):
            w.writerow([repr(round(t * dt, 10))] + [repr(float(v)) for v in states[t]]
                       + [repr(float(v)) for v in controls[t]])


def read_trajectory_csv(path):
    rows = []
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    for r in reader:
        rows.append([float(r[k]) for k in TRAJECTORY_HEADER])
    return np.array(rows).reshape(-1, len(TRAJECTORY_HEADER))
