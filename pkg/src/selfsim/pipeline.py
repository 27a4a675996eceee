"""Run configuration, manifest and artifact writers shared by the CLI and scripts."""

from __future__ import annotations

import dataclasses
import datetime as _dt
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .observables import EnergyReport, QuadConfig, energy, energy_ratios
from .ode import EquationParams, IntegratorConfig
from .shooting import ConnectingOrbit, ShooterConfig, solve_orbits
from .stability import EigenShotConfig, SpectrumResult, find_spectrum

CSV_FLOAT = "{:.8e}"  # nine significant digits


def fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return CSV_FLOAT.format(float(x))


@dataclass(frozen=True)
class EigenBlock:
    """Serializable part of :class:`EigenShotConfig` (the integrator is shared)."""

    lambda2_min: float = 1e-6
    lambda2_max: float = 1e5
    grid_count: int = 400
    lambda2_ceiling: float = 1e12
    match_point: float = 0.5
    secant_tol: float = 1e-9
    left_offset: float = 1e-6
    right_offset: float = 1e-6
    stiff_lambda2: float = 1e3


@dataclass(frozen=True)
class RunConfig:
    m: int = 3
    l: int = 1
    n_max: int = 4
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    shooter: ShooterConfig = field(default_factory=ShooterConfig)
    eigen: EigenBlock = field(default_factory=EigenBlock)
    quad: QuadConfig = field(default_factory=QuadConfig)

    @property
    def params(self) -> EquationParams:
        return EquationParams(m=self.m, l=self.l)

    def eigen_config(self) -> EigenShotConfig:
        return EigenShotConfig(**dataclasses.asdict(self.eigen), integrator=self.integrator)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
        blocks = {
            "integrator": IntegratorConfig,
            "shooter": ShooterConfig,
            "eigen": EigenBlock,
            "quad": QuadConfig,
        }
        kw = {}
        for k, v in d.items():
            kw[k] = blocks[k](**v) if k in blocks else v
        base = cls()
        merged = {f.name: kw.get(f.name, getattr(base, f.name)) for f in dataclasses.fields(cls)}
        if merged["n_max"] != merged["shooter"].n_max:
            merged["shooter"] = dataclasses.replace(merged["shooter"], n_max=merged["n_max"])
        return cls(**merged)

    def updated(self, **changes) -> "RunConfig":
        """Apply flat overrides; ``rel_tol`` etc. go to their blocks."""
        integ = {k: changes.pop(k) for k in ("rel_tol", "abs_tol", "x_max") if k in changes}
        shoot = {k: changes.pop(k) for k in ("fit_point",) if k in changes}
        cfg = dataclasses.replace(self, **changes)
        if integ:
            cfg = dataclasses.replace(cfg, integrator=dataclasses.replace(cfg.integrator, **integ))
        if shoot or cfg.shooter.n_max != cfg.n_max:
            cfg = dataclasses.replace(cfg, shooter=dataclasses.replace(cfg.shooter, n_max=cfg.n_max, **shoot))
        return cfg


def load_config(path: str | Path) -> dict:
    """Read a JSON config file; a run manifest is accepted too (its ``config`` block)."""
    with open(path) as fh:
        data = json.load(fh)
    if "config" in data and "orbits" in data:
        data = data["config"]
    return data


@dataclass
class OrbitRecord:
    n: int
    a: float
    b_rho: float
    beta_x: float
    beta_bisection: float
    E: float | None = None
    E_error: float | None = None
    lambda2: list[float] | None = None
    crossing_count: int = 0
    newton_iterations: int = 0
    mismatch: float = 0.0
    gauge_residual: float | None = None
    gauge_zero_count: int | None = None


@dataclass
class RunManifest:
    config: RunConfig
    orbits: list[OrbitRecord]
    version: str = __version__
    timestamp: str = ""
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = {
            "version": self.version,
            "timestamp": self.timestamp,
            "config": self.config.to_dict(),
            "orbits": [dataclasses.asdict(o) for o in self.orbits],
            "diagnostics": self.diagnostics,
        }
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        d = json.loads(text)
        return cls(
            config=RunConfig.from_dict(d["config"]),
            orbits=[OrbitRecord(**o) for o in d["orbits"]],
            version=d.get("version", ""),
            timestamp=d.get("timestamp", ""),
            diagnostics=d.get("diagnostics", {}),
        )


@dataclass
class RunResult:
    config: RunConfig
    orbits: list[ConnectingOrbit]
    energies: list[EnergyReport] | None
    spectra: dict[int, SpectrumResult] = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def ratios(self) -> list[float | None]:
        if not self.energies or len(self.energies) < 2:
            return [None] * len(self.orbits)
        return list(energy_ratios(self.energies)) + [None]

    def manifest(self) -> RunManifest:
        recs = []
        for i, o in enumerate(self.orbits):
            e = self.energies[i] if self.energies else None
            sp = self.spectra.get(o.n)
            recs.append(
                OrbitRecord(
                    n=o.n,
                    a=float(o.a),
                    b_rho=float(o.b_rho),
                    beta_x=float(o.beta_x),
                    beta_bisection=float(o.diagnostics.get("beta_bisection", math.nan)),
                    E=None if e is None else e.E,
                    E_error=None if e is None else e.quadrature_error_estimate,
                    lambda2=None if sp is None else list(sp.eigenvalues),
                    crossing_count=o.crossing_count,
                    newton_iterations=o.newton_iterations,
                    mismatch=float(o.mismatch),
                    gauge_residual=None if sp is None else sp.gauge_residual,
                    gauge_zero_count=None if sp is None else sp.gauge_zero_count,
                )
            )
        stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        return RunManifest(self.config, recs, timestamp=stamp, diagnostics={"timings_s": self.timings})


def energy_available(cfg: RunConfig) -> bool:
    return (cfg.m, cfg.l) == (3, 1)


def run(cfg: RunConfig, *, with_energy: bool = True, spectrum_levels=()) -> RunResult:
    t0 = time.perf_counter()
    orbits = solve_orbits(cfg.params, cfg.n_max, cfg.shooter, cfg.integrator)
    t1 = time.perf_counter()
    energies = [energy(o, cfg.quad) for o in orbits] if with_energy and energy_available(cfg) else None
    t2 = time.perf_counter()
    spectra = {}
    ec = cfg.eigen_config()
    for n in spectrum_levels:
        spectra[n] = find_spectrum(orbits[n], ec)
    t3 = time.perf_counter()
    timings = {"solve": round(t1 - t0, 3), "energy": round(t2 - t1, 3), "spectrum": round(t3 - t2, 3)}
    return RunResult(cfg, orbits, energies, spectra, timings)


# --- writers ---------------------------------------------------------------------


def table_rows(result: RunResult) -> list[dict]:
    ratios = result.ratios()
    rows = []
    for i, o in enumerate(result.orbits):
        rows.append(
            {
                "n": o.n,
                "a": o.a,
                "b": o.b_rho,
                "E": result.energies[i].E if result.energies else None,
                "ratio": ratios[i],
            }
        )
    return rows


def write_table(result: RunResult, path: Path, fmt_kind: str = "csv") -> Path:
    rows = table_rows(result)
    if fmt_kind == "json":
        path = path.with_suffix(".json")
        path.write_text(json.dumps(rows, indent=2) + "\n")
        return path
    lines = ["n,a,b,E,ratio"]
    for r in rows:
        lines.append(",".join([str(r["n"]), fmt(r["a"]), fmt(r["b"]), fmt(r["E"]), fmt(r["ratio"])]))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_spectrum(spectra: dict[int, SpectrumResult], path: Path, fmt_kind: str = "csv") -> Path:
    if fmt_kind == "json":
        path = path.with_suffix(".json")
        data = [
            {
                "n": n,
                "eigenvalues": sp.eigenvalues,
                "gauge_residual": sp.gauge_residual,
                "gauge_zero_count": sp.gauge_zero_count,
            }
            for n, sp in sorted(spectra.items())
        ]
        path.write_text(json.dumps(data, indent=2) + "\n")
        return path
    lines = ["n,k,lambda2"]
    for n, sp in sorted(spectra.items()):
        for k, lam2 in enumerate(sp.eigenvalues, start=1):
            lines.append(f"{n},{k},{fmt(lam2)}")
    path.write_text("\n".join(lines) + "\n")
    return path


def write_gauge(spectra: dict[int, SpectrumResult], path: Path) -> Path:
    lines = ["n,gauge_residual,gauge_zero_count"]
    for n, sp in sorted(spectra.items()):
        lines.append(f"{n},{fmt(sp.gauge_residual)},{sp.gauge_zero_count}")
    path.write_text("\n".join(lines) + "\n")
    return path


def write_profiles(orbits: list[ConnectingOrbit], out_dir: Path, samples: int = 1001) -> list[Path]:
    """profile_n.dat: whitespace-separated rho, f, f' columns on [0, 1]."""
    rho = np.linspace(0.0, 1.0, samples)
    inner = rho[1:-1]
    paths = []
    for o in orbits:
        f, df = o.evaluate(inner)
        f = np.concatenate([[0.0], f, [0.5 * math.pi]])
        df_end = o.b_rho if o.params.m == 3 else (0.0 if o.params.m > 3 else math.nan)
        df0 = o.a if o.params.l == 1 else 0.0
        df = np.concatenate([[df0], df, [df_end]])
        p = out_dir / f"profile_{o.n}.dat"
        with open(p, "w") as fh:
            fh.write("# rho f df\n")
            for r, a, b in zip(rho, f, df):
                fh.write(f"{r:.8e} {a:.16e} {b:.16e}\n")
        paths.append(p)
    return paths


def write_gnuplot(orbits: list[ConnectingOrbit], out_dir: Path) -> Path:
    p = out_dir / "profiles.gp"
    plots = ", ".join(f"'profile_{o.n}.dat' using 1:2 with lines title 'n={o.n}'" for o in orbits)
    p.write_text(
        "set xlabel 'rho'\nset ylabel 'f'\nset key left top\n"
        "set arrow from 0,pi/2 to 1,pi/2 nohead dashtype 2\n"
        f"plot {plots}\n"
    )
    return p
