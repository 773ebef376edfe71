"""JSON scenario files describing the track, obstacles, costs and limits.

Every key is optional; missing keys take the :class:`EnvConfig` defaults::

    {
      "path": {"radius": 10.0, "straight": 20.0, "spacing": 0.5},
      "waypoints": [[x, y], ...],          # overrides "path" when present
      "obstacles": [[cx, cy, r], ...],
      "dynamics": {"wheelbase": 2.5, "dt": 0.1, "T": 20},
      "cost": {"goal_weights": [wp, wh, wv], "terminal_scale": 5.0,
               "target_speed": 2.0, "R": [[1, 0], [0, 0.1]], "viol_weight": 1e-8},
      "limits": {"delta_max": 0.5, "a_max": 3.0}
    }
"""
from __future__ import annotations

import json

import numpy as np

from .vehicle import DomainError, EnvConfig, stadium_path

_SECTIONS = {
    "dynamics": ("wheelbase", "dt", "T"),
    "cost": ("goal_weights", "terminal_scale", "target_speed", "R", "viol_weight"),
    "limits": ("delta_max", "a_max"),
}
_TOP = {"path", "waypoints", "obstacles", *_SECTIONS}


def env_from_dict(d: dict) -> EnvConfig:
    unknown = set(d) - _TOP
    if unknown:
        raise DomainError(f"unknown scenario keys: {sorted(unknown)}")
    kw = {}
    for section, keys in _SECTIONS.items():
        sub = d.get(section, {})
        bad = set(sub) - set(keys)
        if bad:
            raise DomainError(f"unknown keys in scenario section {section!r}: {sorted(bad)}")
        kw.update(sub)
    if "waypoints" in d:
        kw["waypoints"] = np.asarray(d["waypoints"], dtype=float)
    elif "path" in d:
        kw["waypoints"] = stadium_path(**d["path"])
    if "obstacles" in d:
        kw["obstacles"] = np.asarray(d["obstacles"], dtype=float).reshape(-1, 3)
    try:
        return EnvConfig(**kw)
    except TypeError as exc:
        raise DomainError(f"bad scenario: {exc}") from exc


def env_to_dict(env: EnvConfig) -> dict:
    """Full description of ``env``; ``env_from_dict`` inverts it exactly."""
    return {
        "waypoints": env.waypoints.tolist(),
        "obstacles": env.obstacles.tolist(),
        "dynamics": {"wheelbase": env.wheelbase, "dt": env.dt, "T": env.T},
        "cost": {"goal_weights": list(env.goal_weights), "terminal_scale": env.terminal_scale,
                 "target_speed": env.target_speed, "R": np.asarray(env.R).tolist(),
                 "viol_weight": env.viol_weight},
        "limits": {"delta_max": env.delta_max, "a_max": env.a_max},
    }


def load_scenario(path) -> EnvConfig:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DomainError(f"{path}: invalid JSON ({exc})") from exc
    return env_from_dict(d)
