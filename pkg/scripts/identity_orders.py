"""Observed refinement orders of every operator identity, per preset.

Usage: python3 scripts/identity_orders.py [--half-width 20] [--points 512 1024 2048]
"""
import argparse

from ssetraj.oracle import identity_suite, refinement_orders
from ssetraj.presets import PRESETS, get_preset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--half-width", type=float, default=20.0)
    ap.add_argument("--points", type=int, nargs="+", default=[512, 1024, 2048])
    ap.add_argument("--report", action="store_true", help="also print the suite report on the standard grid")
    args = ap.parse_args()
    for name in sorted(PRESETS):
        p = get_preset(name)
        res = refinement_orders(p.coefficients(), args.half_width, args.points)
        print(f"# {name}")
        for k, r in res.items():
            tail = "exact" if r.exact else " ".join(f"{o:.3f}" for o in r.orders)
            print(f"  {k:<22s} residuals {' '.join(f'{v:.2e}' for v in r.residuals)}  orders {tail}")
        if args.report:
            print(identity_suite(p.coefficients(), p.make_grid()).text())


if __name__ == "__main__":
    main()
