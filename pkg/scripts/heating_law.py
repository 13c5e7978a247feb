"""Energy growth of the fluctuating trap against eta^2 / (2M).

Usage: python3 scripts/heating_law.py [--n-traj 2000] [--threads 1]
"""
import argparse
import time

from ssetraj.observe import heating_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-traj", type=int, default=2000)
    ap.add_argument("--T", type=float, default=2.0)
    ap.add_argument("--dt", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--potential", choices=["harmonic", "gaussian-well"], default="harmonic")
    args = ap.parse_args()
    print(f"{'M':>4} {'eta':>5} {'slope':>9} {'mc se':>8} {'fit se':>8} {'ref':>7} {'rel err':>8} {'time':>6}")
    for M, eta in [(1.0, 0.5), (2.0, 1.0), (1.0, 0.0)]:
        t0 = time.perf_counter()
        r = heating_experiment(M, 1.0, eta, args.T, args.dt, args.n_traj, args.seed,
                               potential=args.potential, threads=args.threads)
        print(f"{M:4g} {eta:5g} {r.slope:9.5f} {r.stderr:8.5f} {r.fit_stderr:8.5f} {r.reference:7.4f} "
              f"{r.relative_error:8.4f} {time.perf_counter() - t0:5.0f}s")


if __name__ == "__main__":
    main()
