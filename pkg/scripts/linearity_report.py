"""Per-instance agreement between fitted datamodel influences and the
frozen-normalizer linear approximation, alongside the cost spread in
units of the temperature.

    python scripts/linearity_report.py --instances 20 --lam 100

The approximation holds when the Gibbs weights of an instance are close to
uniform, i.e. when the spread of sample costs is small next to lambda. The
``--lam`` flag shows how agreement recovers as the temperature grows.
"""
import argparse

import numpy as np

from dmmppi.datamodel import FitConfig, fit_instance, linear_approx_theta
from dmmppi.mppi import MppiConfig, evaluate_samples, make_rng
from dmmppi.offline import StateDistribution, sample_initial_state
from dmmppi.vehicle import EnvConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--instances", type=int, default=20)
    ap.add_argument("--lam", type=float, nargs="+", default=[100.0])
    ap.add_argument("--M", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    env = EnvConfig()
    for lam in args.lam:
        cfg = MppiConfig(K=100, lam=lam)
        rs, spreads = [], []
        for i in range(args.instances):
            rng = make_rng(args.seed, 8, i)
            x0 = sample_initial_state(env, rng, StateDistribution())
            inst = evaluate_samples(x0, np.zeros((env.T, 2)), cfg, env, rng)
            theta = fit_instance(inst.total, FitConfig(M=args.M), lam, rng).theta
            approx = linear_approx_theta(inst.total, lam, 0.5)
            r = np.corrcoef(theta, approx)[0, 1] if np.std(theta) and np.std(approx) else np.nan
            spread = float(np.std(inst.total) / lam)
            rs.append(r)
            spreads.append(spread)
            print(f"lam={lam:<8g} instance {i:2d}  std(C)/lam={spread:8.3f}  r={r:.3f}")
        rs = np.array(rs)
        print(f"lam={lam:g}: {int(np.sum(rs > 0.9))}/{len(rs)} instances with r > 0.9, "
              f"median r {np.nanmedian(rs):.3f}, median std(C)/lam {np.median(spreads):.2f}\n")


if __name__ == "__main__":
    main()
