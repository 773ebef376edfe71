"""Three-way comparison: standard MPPI at a small and a large sample size
against DM-MPPI (fixed and adaptive penalty) at K=100.

    python scripts/compare_modes.py --seeds 0 1 2 3 4 --steps 400 --out runs/compare

Trains the predictor first unless ``--model`` points at an existing one.
"""
import argparse
import json
import os

import numpy as np

from dmmppi.controller import OnlineConfig, run_episode
from dmmppi.mppi import MppiConfig
from dmmppi.offline import OfflineConfig, run_offline
from dmmppi.predictor import load
from dmmppi.vehicle import EnvConfig

ROWS = [("standard", 50), ("standard", 500), ("dm-fixed", 100), ("dm-adaptive", 100)]
KEYS = ["position_rmse", "heading_rmse", "min_obstacle_dist", "mean_r_viol", "mean_kept", "mean_iter_ms"]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--steps", type=int, default=400)
    ap.add_argument("--model", default="")
    ap.add_argument("--out", default="runs/compare")
    args = ap.parse_args()

    env = EnvConfig()
    os.makedirs(args.out, exist_ok=True)
    if args.model:
        model = load(args.model)
        with open(os.path.join(os.path.dirname(args.model), "report.json")) as fh:
            tau = json.load(fh)["report"]["tau"]
    else:
        model, report, _, _ = run_offline(OfflineConfig(), env, out_dir=os.path.join(args.out, "offline"))
        tau = report["tau"]
        print(f"offline: val R2 {report['val_r2']:.3f}, tau {tau:.4g}")

    table = {}
    for mode, K in ROWS:
        runs = [run_episode(env, MppiConfig(K=K, seed=s), OnlineConfig(tau=tau), model, args.steps,
                            mode=mode).metrics for s in args.seeds]
        table[f"{mode} K={K}"] = {k: (float(np.mean([r[k] for r in runs])), float(np.std([r[k] for r in runs])))
                                  for k in KEYS}

    print(f"{'':20s}" + "".join(f"{k:>22s}" for k in KEYS))
    for name, row in table.items():
        print(f"{name:20s}" + "".join(f"{m:>13.4g} ± {s:<6.2g}" for m, s in row.values()))
    with open(os.path.join(args.out, "compare.json"), "w") as fh:
        json.dump({"tau": tau, "steps": args.steps, "seeds": args.seeds, "table": table}, fh, indent=2)


if __name__ == "__main__":
    main()
