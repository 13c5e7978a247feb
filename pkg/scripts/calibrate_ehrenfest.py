"""Estimate the dt-coefficient of the Ehrenfest residual by coupled refinement.

Runs the same Brownian paths at dt and dt/2 (increments summed in pairs) and
reports ``(residual(dt) - residual(dt/2)) / (dt/2)`` per observable. The
frozen band constant used by the ehrenfest experiment should exceed these.

Usage: python3 scripts/calibrate_ehrenfest.py [--preset qbm-e1] [--n-traj 500]
"""
import argparse

import numpy as np

from ssetraj.experiments import observable_spec, setup
from ssetraj.config import build_config
from ssetraj.integrate import SchemeConfig, run_ensemble
from ssetraj.noise import NoiseSource
from ssetraj.observe import ehrenfest_residual, observers_for


def residuals(system, xi, T, dt, refine, n_traj, seed, names, spacing):
    obs = observers_for({n: observable_spec(n) for n in names}, system, with_drift=True)
    rec = run_ensemble(system, xi, T, SchemeConfig(dt), NoiseSource(seed, system.m), n_traj,
                       observers=obs, sample_every=round(spacing / dt), refine=refine)
    return {n: ehrenfest_residual(rec.values[n], rec.values["d:" + n], rec.times) for n in names}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", default="qbm-e1")
    ap.add_argument("--n-traj", type=int, default=500)
    ap.add_argument("--dt", type=float, default=1e-4)
    ap.add_argument("--T", type=float, default=0.5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    cfg = build_config({"preset": args.preset}, "ehrenfest")
    system, xi = setup(cfg)
    names = ["x", "x^2", "p^2"]
    coarse = residuals(system, xi, args.T, args.dt, 2, args.n_traj, args.seed, names, 0.01)
    fine = residuals(system, xi, args.T, args.dt / 2, 1, args.n_traj, args.seed, names, 0.01)
    h2 = system.grid.h**2
    for n in names:
        c1 = np.max(np.abs(coarse[n].residual - fine[n].residual)) / (args.dt / 2)
        worst = np.max(np.abs(coarse[n].residual) / (args.dt + h2))
        print(f"{n:>4}: dt-coefficient ~ {c1:.3f}; max |residual| / (dt + h^2) = {worst:.3f}")


if __name__ == "__main__":
    main()
