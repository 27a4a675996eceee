"""Command-line front end: ``selfsim {solve,spectrum,check,energy,export}``.

Exit codes: 0 ok, 2 inadmissible (m, l), 3 solver failure, 4 I/O error,
5 eigenvalue count mismatch.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .observables import EvenDimensionError, check_condition, condition_threshold
from .ode import StepFailure
from .pipeline import (
    RunConfig,
    energy_available,
    fmt,
    load_config,
    run,
    write_gauge,
    write_gnuplot,
    write_profiles,
    write_spectrum,
    write_table,
)
from .shooting import BracketNotFound, ClassificationError, NewtonDivergence
from .stability import CountMismatch

EXIT_OK = 0
EXIT_INADMISSIBLE = 2
EXIT_SOLVER = 3
EXIT_IO = 4
EXIT_COUNT = 5

log = logging.getLogger("selfsim")

_FLAG_FIELDS = {
    "m": "m",
    "l": "l",
    "nmax": "n_max",
    "rel_tol": "rel_tol",
    "abs_tol": "abs_tol",
    "xmax": "x_max",
    "fit_point": "fit_point",
}


def _common(p: argparse.ArgumentParser, *, ranges: bool = False):
    if ranges:
        p.add_argument("--m", type=str, default=None, help="odd dimension or range a..b")
        p.add_argument("--l", type=str, default=None, help="degree or range a..b")
    else:
        p.add_argument("--m", type=int, default=None)
        p.add_argument("--l", type=int, default=None)
    p.add_argument("--nmax", type=int, default=None)
    p.add_argument("--rel-tol", type=float, default=None)
    p.add_argument("--abs-tol", type=float, default=None)
    p.add_argument("--xmax", type=float, default=None)
    p.add_argument("--fit-point", type=float, default=None)
    p.add_argument("--out-dir", type=Path, default=Path("."))
    p.add_argument("--config", type=Path, default=None, help="JSON config file or run manifest")
    p.add_argument("--show-config", action="store_true", help="print the effective configuration and exit")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="selfsim", description="Self-similar equivariant wave-map profiles")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("solve", help="solve f_0..f_nmax and write the table, manifest and profiles")
    _common(p)
    p = sub.add_parser("spectrum", help="unstable eigenvalues of f_n (m=3, l=1)")
    _common(p)
    p.add_argument("--n", type=int, action="append", default=None, help="profile index (repeatable; default all)")
    p = sub.add_parser("check", help="admissibility of (m, l)")
    _common(p, ranges=True)
    p = sub.add_parser("energy", help="energies and ratios (m=3, l=1)")
    _common(p)
    p = sub.add_parser("export", help="plot-ready profile data and a gnuplot script")
    _common(p)
    return parser


def resolve_config(args) -> RunConfig:
    """Flags > config file > built-in defaults."""
    cfg = RunConfig()
    if args.config is not None:
        cfg = RunConfig.from_dict(load_config(args.config))
    overrides = {}
    for flag, name in _FLAG_FIELDS.items():
        val = getattr(args, flag, None)
        if val is not None:
            overrides[name] = val
    return cfg.updated(**overrides) if overrides else cfg


def _admissible_or_report(cfg: RunConfig) -> int | None:
    try:
        rep = check_condition(cfg.m, cfg.l, cfg.integrator)
    except (EvenDimensionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INADMISSIBLE
    if not rep.admissible:
        print(
            f"error: (m={cfg.m}, l={cfg.l}) violates the condition l > (sqrt2-1)(m-2)/2 = {rep.threshold:.4f}; "
            "the countable family does not exist",
            file=sys.stderr,
        )
        return EXIT_INADMISSIBLE
    return None


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_solve(args, cfg: RunConfig) -> int:
    code = _admissible_or_report(cfg)
    if code is not None:
        return code
    out = _out_dir(args)
    result = run(cfg)
    write_table(result, out / "table.csv", args.format)
    (out / "profiles.json").write_text(result.manifest().to_json() + "\n")
    write_profiles(result.orbits, out)
    _print_table(result)
    return EXIT_OK


def cmd_energy(args, cfg: RunConfig) -> int:
    code = _admissible_or_report(cfg)
    if code is not None:
        return code
    if not energy_available(cfg):
        print("error: the energy functional is only available for m=3, l=1", file=sys.stderr)
        return EXIT_INADMISSIBLE
    out = _out_dir(args)
    result = run(cfg)
    rows = ["n,E,quadrature_error,ratio"]
    ratios = result.ratios()
    for rep, r in zip(result.energies, ratios):
        rows.append(f"{rep.n},{fmt(rep.E)},{fmt(rep.quadrature_error_estimate)},{fmt(r)}")
    if args.format == "json":
        data = [dataclasses.asdict(rep) | {"ratio": r} for rep, r in zip(result.energies, ratios)]
        (out / "energy.json").write_text(json.dumps(data, indent=2) + "\n")
    else:
        (out / "energy.csv").write_text("\n".join(rows) + "\n")
    print("\n".join(rows))
    return EXIT_OK


def cmd_spectrum(args, cfg: RunConfig) -> int:
    if (cfg.m, cfg.l) != (3, 1):
        print("error: the stability analysis is available for m=3, l=1 only", file=sys.stderr)
        return EXIT_INADMISSIBLE
    levels = sorted(set(args.n)) if args.n else list(range(cfg.n_max + 1))
    if any(n < 0 for n in levels):
        print("error: --n must be nonnegative", file=sys.stderr)
        return EXIT_SOLVER
    if args.n:
        cfg = cfg.updated(n_max=max(levels))
    out = _out_dir(args)
    result = run(cfg, with_energy=False, spectrum_levels=levels)
    write_spectrum(result.spectra, out / "spectrum.csv", args.format)
    write_gauge(result.spectra, out / "gauge.csv")
    print("n,k,lambda2")
    for n in levels:
        sp = result.spectra[n]
        for k, lam2 in enumerate(sp.eigenvalues, start=1):
            print(f"{n},{k},{fmt(lam2)}")
        print(f"# n={n}: {len(sp.eigenvalues)} eigenvalue(s), gauge residual {sp.gauge_residual:.2e}, gauge zeros {sp.gauge_zero_count}")
    return EXIT_OK


def _parse_range(text: str | None, default: list[int]) -> list[int]:
    if text is None:
        return default
    if ".." in text:
        a, b = text.split("..", 1)
        return list(range(int(a), int(b) + 1))
    return [int(v) for v in text.split(",")]


def cmd_check(args, cfg: RunConfig) -> int:
    ms = _parse_range(args.m, [3, 5, 7, 9])
    ls = _parse_range(args.l, [1, 2, 3])
    rows = []
    for m in ms:
        for l in ls:
            try:
                rep = check_condition(m, l, cfg.integrator)
            except EvenDimensionError:
                rows.append({"m": m, "l": l, "threshold": condition_threshold(m), "admissible": None, "oscillation_check": None, "note": "m must be odd"})
                continue
            except ValueError as exc:
                rows.append({"m": m, "l": l, "threshold": None, "admissible": None, "oscillation_check": None, "note": str(exc)})
                continue
            rows.append(dataclasses.asdict(rep) | {"note": ""})
    if args.format == "json":
        print(json.dumps(rows, indent=2))
        return EXIT_OK
    print(f"{'m':>3} {'l':>3} {'threshold':>10} {'admissible':>11} {'oscillates':>11}  note")
    for r in rows:
        thr = "" if r["threshold"] is None else f"{r['threshold']:.4f}"
        adm = "-" if r["admissible"] is None else ("yes" if r["admissible"] else "no")
        osc = "-" if r["oscillation_check"] is None else ("yes" if r["oscillation_check"] else "no")
        print(f"{r['m']:>3} {r['l']:>3} {thr:>10} {adm:>11} {osc:>11}  {r['note']}")
    return EXIT_OK


def cmd_export(args, cfg: RunConfig) -> int:
    code = _admissible_or_report(cfg)
    if code is not None:
        return code
    out = _out_dir(args)
    result = run(cfg, with_energy=energy_available(cfg))
    write_profiles(result.orbits, out)
    write_gnuplot(result.orbits, out)
    write_table(result, out / "table.csv", args.format)
    print(f"wrote {len(result.orbits)} profiles and profiles.gp to {out}")
    return EXIT_OK


def _print_table(result):
    print("n,a,b,E,ratio")
    for i, o in enumerate(result.orbits):
        e = result.energies[i].E if result.energies else None
        print(f"{o.n},{fmt(o.a)},{fmt(o.b_rho)},{fmt(e)},{fmt(result.ratios()[i])}")


COMMANDS = {
    "solve": cmd_solve,
    "spectrum": cmd_spectrum,
    "check": cmd_check,
    "energy": cmd_energy,
    "export": cmd_export,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "check":
            cfg = RunConfig.from_dict(load_config(args.config)) if args.config else RunConfig()
        else:
            cfg = resolve_config(args)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INADMISSIBLE if "odd" in str(exc) else EXIT_SOLVER
    if args.show_config:
        print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
        return EXIT_OK
    try:
        return COMMANDS[args.command](args, cfg)
    except CountMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COUNT
    except (BracketNotFound, NewtonDivergence, ClassificationError, StepFailure, RuntimeError) as exc:
        print(f"error: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"error: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
