"""Solve f_0..f_nmax for (m, l) and print the (a, b, E, ratio) table with timings."""

import argparse
import math
import time

from selfsim.pipeline import RunConfig, fmt, run


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--m", type=int, default=3)
    ap.add_argument("--l", type=int, default=1)
    ap.add_argument("--nmax", type=int, default=4)
    args = ap.parse_args()

    cfg = RunConfig().updated(m=args.m, l=args.l, n_max=args.nmax)
    t0 = time.perf_counter()
    result = run(cfg)
    elapsed = time.perf_counter() - t0

    print("n,a,b,E,ratio,crossings,newton_iterations")
    ratios = result.ratios()
    for i, o in enumerate(result.orbits):
        e = result.energies[i].E if result.energies else None
        print(f"{o.n},{fmt(o.a)},{fmt(o.b_rho)},{fmt(e)},{fmt(ratios[i])},{o.crossing_count},{o.newton_iterations}")
    if result.energies and len(result.energies) > 1:
        print(f"# limiting ratio exp(2 pi / sqrt 7) = {math.exp(2 * math.pi / math.sqrt(7)):.6f}")
    print(f"# {elapsed:.2f} s")


if __name__ == "__main__":
    main()
