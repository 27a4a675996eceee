"""Unstable eigenvalues, gauge-mode diagnostics and Hessian signs for f_0..f_nmax (m=3, l=1)."""

import argparse
import time

from selfsim.ode import EquationParams
from selfsim.shooting import solve_orbits
from selfsim.stability import eigenfunction, find_spectrum, hessian_form, weighted_norm2


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--nmax", type=int, default=4)
    ap.add_argument("--hessian", action="store_true", help="also evaluate the second variation on each eigenfunction")
    args = ap.parse_args()

    orbits = solve_orbits(EquationParams(3, 1), args.nmax)
    print("n,k,lambda2,gauge_residual,gauge_zeros" + (",hessian,half_(1-lambda2)_norm" if args.hessian else ""))
    for o in orbits:
        t0 = time.perf_counter()
        sp = find_spectrum(o)
        for k, lam2 in enumerate(sp.eigenvalues, start=1):
            row = f"{o.n},{k},{lam2:.10g},{sp.gauge_residual:.2e},{sp.gauge_zero_count}"
            if args.hessian:
                ef = eigenfunction(o, lam2)
                q = hessian_form(o, ef)
                row += f",{q:.6e},{0.5 * (1 - lam2) * weighted_norm2(ef):.6e}"
            print(row)
        if not sp.eigenvalues:
            print(f"{o.n},,,{sp.gauge_residual:.2e},{sp.gauge_zero_count}")
        print(f"# n={o.n}: {time.perf_counter() - t0:.2f} s")


if __name__ == "__main__":
    main()
