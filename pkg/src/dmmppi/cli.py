"""Command-line driver: ``offline``, ``run``, ``sweep`` and ``validate``.

Settings come from three layers, later ones winning: built-in defaults, a
flat ``key = value`` file given with ``--config``, and command-line flags.
Every setting has a flag of the same name with ``_`` spelled ``-``.
Output goes under ``--out``, else ``$DMMPPI_OUT``, else ``./runs``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from .controller import MODES, OnlineConfig, run_episode
from .datamodel import FitConfig
from .mppi import MppiConfig
from .offline import OfflineConfig, StateDistribution, run_offline
from .predictor import ModelFormatError, TrainConfig, load
from .scenario import env_to_dict, load_scenario
from .svg import line_plot
from .validate import run_all
from .vehicle import DomainError, EnvConfig, write_trajectory_csv

log = logging.getLogger("dmmppi")

OUT_ENV = "DMMPPI_OUT"
SUMMARY_METRICS = ("position_rmse", "heading_rmse", "min_obstacle_dist", "mean_r_viol",
                   "final_half_r_viol", "mean_iter_ms", "mean_kept", "mean_k_eff", "final_rho")
SWEEP_COLUMNS = ("K", "mode", "seed", "position_rmse", "heading_rmse", "min_obstacle_dist",
                 "mean_r_viol", "mean_iter_ms")
DIAG_COLUMNS = ("iter", "rho", "r_viol", "kept", "K_eff", "ms")


class ConfigError(ValueError):
    pass


def _int_list(s: str) -> List[int]:
    return [int(v) for v in str(s).replace(" ", "").split(",") if v]


def _str_list(s: str) -> List[str]:
    return [v for v in str(s).replace(" ", "").split(",") if v]


def _seed_list(s: str) -> List[int]:
    """``0,1,2`` or an inclusive range ``0-4``; a mix of both also works."""
    out = []
    for part in _str_list(s):
        if "-" in part[1:]:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return out


def _optional_float(s: str) -> Optional[float]:
    return None if str(s).lower() in ("", "none", "auto") else float(s)


@dataclass(frozen=True)
class Setting:
    name: str
    parse: Callable[[str], Any]
    default: str
    help: str


SETTINGS = [
    Setting("scenario", str, "", "JSON scenario file; empty uses the built-in track"),
    Setting("seed", int, "0", "master seed for offline collection and validate"),
    Setting("n", int, "200", "offline instances"),
    Setting("k", int, "100", "samples per MPPI iteration"),
    Setting("m", int, "50", "random subsets per datamodel fit"),
    Setting("alpha", float, "0.5", "subset inclusion probability"),
    Setting("mu", float, "0.01", "LASSO penalty"),
    Setting("lam", float, "100", "MPPI temperature"),
    Setting("sigma_steer", float, "0.1", "steering noise variance"),
    Setting("sigma_accel", float, "0.5", "acceleration noise variance"),
    Setting("rho0", float, "1e10", "initial (and fixed) violation penalty"),
    Setting("epochs", int, "1000", "predictor training epochs"),
    Setting("lr", float, "1e-3", "Adam learning rate"),
    Setting("batch_size", int, "256", "mini-batch size"),
    Setting("hidden", _int_list, "64,64", "hidden layer widths"),
    Setting("val_fraction", float, "0.1", "share of dataset rows held out for validation"),
    Setting("keep_fraction", float, "0.1", "share of offline samples the calibrated tau keeps"),
    Setting("collection", str, "iid", "instance collection: iid or closed-loop"),
    Setting("lateral_var", float, "1.0", "offline state lateral offset variance (m^2)"),
    Setting("heading_var", float, "0.1", "offline state heading noise variance (rad^2)"),
    Setting("near_fraction", float, "0.3", "share of offline states drawn next to an obstacle"),
    Setting("mode", str, "standard", "run mode: " + ", ".join(MODES)),
    Setting("steps", int, "400", "control steps per episode"),
    Setting("seeds", _seed_list, "0-4", "episode seeds, e.g. 0,1,2 or 0-4"),
    Setting("tau", _optional_float, "auto", "pruning threshold; auto reads it from the offline report"),
    Setting("r_target", float, "0.05", "target violation-influence ratio"),
    Setting("eta", float, "1e9", "penalty adaptation step"),
    Setting("rho_min", float, "0", "lower penalty bound"),
    Setting("rho_max", float, "1e12", "upper penalty bound"),
    Setting("model", str, "", "predictor file; empty uses <out>/offline/model.bin"),
    Setting("k_grid", _int_list, "50,100,150,200,250,300,350,400,450,500", "sweep sample sizes"),
    Setting("modes", _str_list, "standard,dm-fixed", "sweep modes"),
    Setting("jobs", int, "1", "parallel worker processes for sweeps (timings are noisier above 1)"),
]
BY_NAME = {s.name: s for s in SETTINGS}


def parse_config_file(path) -> Dict[str, str]:
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (p.strip() for p in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in BY_NAME:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            out[key] = value
    return out


def resolve(file_values: Dict[str, str], cli_values: Dict[str, Optional[str]]) -> Dict[str, Any]:
    """Defaults, then the config file, then flags; every value parsed and checked by key."""
    raw = {s.name: s.default for s in SETTINGS}
    raw.update(file_values)
    raw.update({k: v for k, v in cli_values.items() if v is not None})
    out = {}
    for name, value in raw.items():
        try:
            out[name] = BY_NAME[name].parse(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {name!r}: {value!r} ({exc})") from None
    if out["mode"] not in MODES:
        raise ConfigError(f"bad value for 'mode': {out['mode']!r}; choose from {', '.join(MODES)}")
    bad = [m for m in out["modes"] if m not in MODES]
    if bad:
        raise ConfigError(f"bad value for 'modes': {bad}")
    return out


def build_env(cfg) -> EnvConfig:
    return load_scenario(cfg["scenario"]) if cfg["scenario"] else EnvConfig()


def offline_config(cfg) -> OfflineConfig:
    return OfflineConfig(
        N=cfg["n"], K=cfg["k"], lam=cfg["lam"], sigma=(cfg["sigma_steer"], cfg["sigma_accel"]),
        rho0=cfg["rho0"],
        fit=FitConfig(M=cfg["m"], alpha=cfg["alpha"], mu=cfg["mu"]),
        train=TrainConfig(epochs=cfg["epochs"], lr=cfg["lr"], batch_size=cfg["batch_size"],
                          seed=cfg["seed"], val_fraction=cfg["val_fraction"], hidden=tuple(cfg["hidden"])),
        states=StateDistribution(lateral_var=cfg["lateral_var"], heading_var=cfg["heading_var"],
                                 near_fraction=cfg["near_fraction"]),
        collection=cfg["collection"], seed=cfg["seed"], keep_fraction=cfg["keep_fraction"])


def mppi_config(cfg, K: int, seed: int) -> MppiConfig:
    return MppiConfig(K=K, lam=cfg["lam"], sigma=(cfg["sigma_steer"], cfg["sigma_accel"]),
                      rho=cfg["rho0"], seed=seed)


def online_config(cfg, tau: float) -> OnlineConfig:
    return OnlineConfig(tau=tau, r_target=cfg["r_target"], eta=cfg["eta"], rho_min=cfg["rho_min"],
                        rho_max=cfg["rho_max"], rho0=cfg["rho0"])


def provenance(cfg, env: EnvConfig, command: str) -> dict:
    scen = env_to_dict(env)
    digest = hashlib.sha256(json.dumps(scen, sort_keys=True).encode()).hexdigest()
    return {"command": command, "config": cfg, "scenario": scen, "scenario_sha256": digest}


def comment_lines(prov: dict) -> List[str]:
    return [f"command: {prov['command']}",
            "config: " + json.dumps(prov["config"], sort_keys=True),
            "scenario: " + json.dumps(prov["scenario"], sort_keys=True)]


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _num(v) -> str:
    return repr(float(v))


# subcommands

def cmd_offline(cfg, out_root) -> int:
    env = build_env(cfg)
    out = os.path.join(out_root, "offline")
    os.makedirs(out, exist_ok=True)
    prov = provenance(cfg, env, "offline")
    model, report, ds, _ = run_offline(offline_config(cfg), env, out, comment_lines(prov))
    # run_offline writes report.json; add the full provenance alongside
    with open(os.path.join(out, "report.json")) as fh:
        rep = json.load(fh)
    rep.update(prov)
    _write_json(os.path.join(out, "report.json"), rep)
    print(f"offline: {report['rows']} rows, {report['degenerate_instances']} degenerate, "
          f"val R2 {report['val_r2']:.3f}, tau {report['tau']:.4g} -> {out}")
    return 0


def _model_path(cfg, out_root) -> str:
    return cfg["model"] or os.path.join(out_root, "offline", "model.bin")


def _load_model_and_tau(cfg, out_root, needed: bool):
    if not needed:
        return None, cfg["tau"] if cfg["tau"] is not None else 0.0
    path = _model_path(cfg, out_root)
    if not os.path.exists(path):
        raise FileNotFoundError(f"predictor model not found at {path}; run `offline` first or pass --model")
    model = load(path)
    tau = cfg["tau"]
    if tau is None:
        rep = os.path.join(os.path.dirname(path), "report.json")
        if not os.path.exists(rep):
            raise ConfigError(f"tau=auto but no report.json next to {path}; pass --tau")
        with open(rep) as fh:
            tau = float(json.load(fh)["report"]["tau"])
    return model, tau


def _episode(args):
    cfg, env, model, tau, mode, K, seed = args
    res = run_episode(env, mppi_config(cfg, K, seed), online_config(cfg, tau), model, cfg["steps"], mode)
    return res


def _summary(per_seed: List[dict]) -> dict:
    out = {}
    for key in SUMMARY_METRICS:
        vals = np.array([m[key] for m in per_seed], dtype=float)
        finite = vals[np.isfinite(vals)]
        out[key] = {"mean": float(finite.mean()) if finite.size else float("nan"),
                    "std": float(finite.std()) if finite.size else float("nan")}
    return out


def write_diagnostics_csv(path, diagnostics, comments=()):
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(DIAG_COLUMNS)
        for i, d in enumerate(diagnostics):
            w.writerow([i, _num(d.rho), _num(d.r_viol), d.kept, _num(d.k_eff), _num(d.ms)])


def cmd_run(cfg, out_root) -> int:
    env = build_env(cfg)
    mode, K = cfg["mode"], cfg["k"]
    model, tau = _load_model_and_tau(cfg, out_root, mode != "standard")
    out = os.path.join(out_root, "run")
    os.makedirs(out, exist_ok=True)
    prov = provenance(cfg, env, "run")
    per_seed = []
    for seed in cfg["seeds"]:
        res = _episode((cfg, env, model, tau, mode, K, seed))
        stem = os.path.join(out, f"{mode}_K{K}_seed{seed}")
        comments = comment_lines(prov) + [f"seed: {seed}", f"tau: {tau!r}"]
        write_trajectory_csv(stem + "_trajectory.csv", res.states, res.controls, env.dt, comments)
        write_diagnostics_csv(stem + "_diagnostics.csv", res.diagnostics, comments)
        per_seed.append(dict(res.metrics, seed=seed))
    summary = {"mode": mode, "K": K, "tau": tau, "per_seed": per_seed, "summary": _summary(per_seed), **prov}
    _write_json(os.path.join(out, f"{mode}_K{K}_summary.json"), summary)
    print(f"{mode} K={K} over {len(per_seed)} seeds:")
    for key, s in summary["summary"].items():
        print(f"  {key:18s} {s['mean']:.4g} ± {s['std']:.3g}")
    return 0


def cmd_sweep(cfg, out_root) -> int:
    env = build_env(cfg)
    modes = cfg["modes"]
    model, tau = _load_model_and_tau(cfg, out_root, any(m != "standard" for m in modes))
    out = os.path.join(out_root, "sweep")
    os.makedirs(out, exist_ok=True)
    prov = provenance(cfg, env, "sweep")
    cells = [(K, mode, seed) for K in cfg["k_grid"] for mode in modes for seed in cfg["seeds"]]
    jobs = [(cfg, env, model, tau, mode, K, seed) for K, mode, seed in cells]
    if cfg["jobs"] > 1:
        with ProcessPoolExecutor(cfg["jobs"]) as ex:
            results = list(ex.map(_episode, jobs))
    else:
        results = [_episode(j) for j in jobs]
    rows = []
    for (K, mode, seed), res in zip(cells, results):
        m = res.metrics
        rows.append([K, mode, seed] + [m[c] for c in SWEEP_COLUMNS[3:]])
    with open(os.path.join(out, "sweep.csv"), "w", newline="") as fh:
        for line in comment_lines(prov) + [f"tau: {tau!r}"]:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow(r[:3] + [_num(v) for v in r[3:]])
    series = {}
    for mode in modes:
        pts = []
        for K in cfg["k_grid"]:
            v = np.array([r[3] for r in rows if r[0] == K and r[1] == mode])
            pts.append((float(K), float(v.mean()), float(v.std())))
        series[mode] = pts
    with open(os.path.join(out, "sweep.svg"), "w") as fh:
        fh.write(line_plot(series, "Position RMSE vs samples", "K (samples per iteration)",
                           "position RMSE (m)"))
    _write_json(os.path.join(out, "sweep.json"), {"tau": tau, "series": series, **prov})
    print(f"sweep: {len(rows)} rows -> {out}")
    for mode, pts in series.items():
        print(f"  {mode:12s} " + "  ".join(f"K={int(k)}:{m:.3f}" for k, m, _ in pts))
    return 0


def cmd_validate(cfg, out_root) -> int:
    env = build_env(cfg)
    checks = run_all(env, cfg["seed"])
    for c in checks:
        print(c.line())
    out = os.path.join(out_root, "validate")
    os.makedirs(out, exist_ok=True)
    _write_json(os.path.join(out, "validate.json"),
                {"checks": [c.__dict__ for c in checks], **provenance(cfg, env, "validate")})
    failed = [c.name for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return 1 if failed else 0


COMMANDS = {"offline": cmd_offline, "run": cmd_run, "sweep": cmd_sweep, "validate": cmd_validate}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dmmppi", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=(fn.__doc__ or name).split("\n")[0])
        sp.add_argument("--config", help="key = value settings file")
        sp.add_argument("--out", help=f"output root (default ${OUT_ENV} or ./runs)")
        sp.add_argument("-v", "--verbose", action="store_true")
        for s in SETTINGS:
            sp.add_argument("--" + s.name.replace("_", "-"), dest=s.name, default=None,
                            metavar=s.name.upper(), help=f"{s.help} (default {s.default or 'empty'})")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out_root = args.out or os.environ.get(OUT_ENV) or "runs"
    try:
        file_values = parse_config_file(args.config) if args.config else {}
        cfg = resolve(file_values, {s.name: getattr(args, s.name) for s in SETTINGS})
        return COMMANDS[args.command](cfg, out_root)
    except (ConfigError, DomainError, ModelFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


cmd_offline.__doc__ = "collect instances, fit datamodels, train the predictor"
cmd_run.__doc__ = "closed-loop episodes in one mode over several seeds"
cmd_sweep.__doc__ = "position RMSE over a grid of sample sizes and modes"
cmd_validate.__doc__ = "statistical diagnostics; exits nonzero if any check fails"


if __name__ == "__main__":
    sys.exit(main())
