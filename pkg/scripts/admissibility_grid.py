"""Admissibility of (m, l): the threshold inequality next to the numerical oscillation check."""

import argparse

from selfsim.observables import EvenDimensionError, check_condition, condition_threshold


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--m-max", type=int, default=15)
    ap.add_argument("--l-max", type=int, default=4)
    args = ap.parse_args()

    ls = range(1, args.l_max + 1)
    print("m   thr    " + " ".join(f"l={l}" for l in ls))
    for m in range(3, args.m_max + 1):
        cells = []
        for l in ls:
            try:
                rep = check_condition(m, l)
            except EvenDimensionError:
                cells.append("  - ")
                continue
            mark = "yes" if rep.admissible else "no"
            if rep.admissible != rep.oscillation_check:
                mark += "!"
            cells.append(f"{mark:>4}")
        print(f"{m:<3} {condition_threshold(m):.3f} " + " ".join(cells))


if __name__ == "__main__":
    main()
