"""Energies, energy-ratio asymptotics, the limiting linear solution H and the
admissibility test for (m, l)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _kernels as K
from .ode import (
    launch_atol,
    HALF_PI,
    DomainError,
    EquationParams,
    IntegratorConfig,
    PhaseState,
    run_kernel,
    series_lightcone,
)
from .quadrature import integrate_panels
from .shooting import ConnectingOrbit

RATIO_LIMIT_M3 = math.exp(2.0 * math.pi / math.sqrt(7.0))


class EnergyUnavailable(NotImplementedError):
    """The energy functional is only defined here for m = 3, l = 1."""


class EvenDimensionError(ValueError):
    """Raised for even m, where the countable family does not exist."""


@dataclass(frozen=True)
class QuadConfig:
    tol: float = 1e-12
    max_levels: int = 30


@dataclass(frozen=True)
class EnergyReport:
    n: int
    E: float
    quadrature_error_estimate: float


@dataclass(frozen=True)
class ConditionReport:
    m: int
    l: int
    threshold: float
    admissible: bool
    oscillation_check: bool


@dataclass
class LimitingSolution:
    """Samples of H on ``x`` (``log_scale`` holds ln of the factor removed by
    rescaling, so the true value is ``H * exp(log_scale)``) and its zeros."""

    x: np.ndarray
    H: np.ndarray
    dH: np.ndarray
    log_scale: np.ndarray
    zeros: np.ndarray

    def zero_spacing(self, count: int = 10, below: float = 60.0) -> float:
        z = self.zeros[self.zeros < below][-count:]
        if len(z) < 2:
            raise ValueError("not enough zeros to fit a spacing")
        slope, _ = np.polyfit(np.arange(len(z)), z, 1)
        return float(slope)


# --- energy -----------------------------------------------------------------


def energy_density(rho, f, df):
    """rho^2 f'^2 - 2 cos^2 f / (1 - rho^2); cos f is taken as sin(pi/2 - f)
    so the light-cone cancellation keeps its relative accuracy."""
    c = np.sin(HALF_PI - f)
    return rho * rho * df * df - 2.0 * c * c / ((1.0 - rho) * (1.0 + rho))


def energy_functional(
    evaluate: Callable[[np.ndarray], PhaseState],
    edges: Sequence[float] | None = None,
    quad: QuadConfig | None = None,
) -> tuple[float, float]:
    """E[f] = 1/2 int_0^1 density for any ``evaluate(rho) -> (f, f')``."""
    quad = quad or QuadConfig()
    if edges is None:
        edges = np.linspace(0.0, 1.0, 65)

    def integrand(r):
        f, df = evaluate(r.ravel())
        return energy_density(r.ravel(), f, df).reshape(r.shape)

    value, err = integrate_panels(integrand, edges, quad.tol, quad.max_levels)
    return float(0.5 * value), float(0.5 * err)


def _orbit_edges(orbit: ConnectingOrbit, max_panels: int = 4000) -> np.ndarray:
    # panel edges on profile nodes keep each GK panel inside one Hermite piece
    t = np.sort(orbit.profile.t)
    stride = max(1, len(t) // max_panels)
    inner = t[::stride]
    return np.unique(np.concatenate([[0.0], inner, [t[-1]], [1.0]]))


def energy(orbit: ConnectingOrbit, quad: QuadConfig | None = None) -> EnergyReport:
    p = orbit.params
    if (p.m, p.l) != (3, 1):
        raise EnergyUnavailable(f"energy is only available for m=3, l=1 (got m={p.m}, l={p.l})")
    E, err = energy_functional(orbit.evaluate, _orbit_edges(orbit), quad)
    orbit.energy = E
    return EnergyReport(orbit.n, float(E), float(err))


def energy_ratios(reports: Sequence[EnergyReport]) -> list[float]:
    """E_n / E_{n+1} for consecutive reports."""
    if len(reports) < 2:
        raise ValueError("need at least two energy reports")
    for r0, r1 in zip(reports, reports[1:]):
        if r1.n != r0.n + 1:
            raise ValueError("energy reports must have consecutive n")
    return [r0.E / r1.E for r0, r1 in zip(reports, reports[1:])]


# --- limiting linear equation ------------------------------------------------


def limiting_H(
    params: EquationParams,
    x_grid,
    config: IntegratorConfig | None = None,
    chunk: float = 5.0,
) -> LimitingSolution:
    """Integrate H'' - (m-2) coth(x) H' + 2k H = 0 with H ~ x^(m-1).

    The equation is linear, so the run is split into chunks and the state is
    divided by its size at each chunk end; ``log_scale`` records the factor.
    """
    config = config or IntegratorConfig()
    x_grid = np.asarray(x_grid, dtype=float)
    if np.any(np.diff(x_grid) <= 0) or x_grid[0] < 0:
        raise DomainError("x_grid must be increasing and nonnegative")
    x0 = min(config.launch_eps, 0.5 * x_grid[x_grid > 0][0]) if np.any(x_grid > 0) else config.launch_eps
    packed = params.packed()
    state = series_lightcone(params, 1.0, x0)
    t_nodes, u_nodes, du_nodes, ddu_nodes, logs = [], [], [], [], []
    log_s = 0.0
    x = x0
    x_end = float(x_grid[-1])
    # the state is renormalised to O(1) per chunk, so the launch scale is the smallest it gets
    atol = launch_atol(config, state)
    while x < x_end:
        xe = min(x + chunk, x_end)
        ts, ua, ub, _, fb, status, _ = run_kernel(K.KIND_LIN, packed, x, state, xe, config, atol=atol)
        if status != K.REACHED_END:
            raise RuntimeError(f"limiting equation integration failed at x={ts[-1]:.6g}")
        t_nodes.append(ts)
        u_nodes.append(ua)
        du_nodes.append(ub)
        ddu_nodes.append(fb)
        logs.append(np.full(len(ts), log_s))
        scale = math.hypot(ua[-1], ub[-1])
        state = PhaseState(ua[-1] / scale, ub[-1] / scale)
        log_s += math.log(scale)
        x = xe
    t = np.concatenate(t_nodes)
    u = np.concatenate(u_nodes)
    du = np.concatenate(du_nodes)
    ddu = np.concatenate(ddu_nodes)
    ls = np.concatenate(logs)
    zeros = _zeros(t, u, du)

    H = np.empty_like(x_grid)
    dH = np.empty_like(x_grid)
    L = np.empty_like(x_grid)
    small = x_grid < x0
    if np.any(small):
        s = series_lightcone(params, 1.0, x_grid[small])
        H[small], dH[small], L[small] = s.u, s.du, 0.0
    big = ~small
    if np.any(big):
        xq = x_grid[big]
        i = np.clip(np.searchsorted(t, xq, side="right") - 1, 0, len(t) - 2)
        # a chunk boundary repeats a node with a different scale; never straddle it
        i = np.where(ls[i + 1] != ls[i], i + 1, i)
        i = np.minimum(i, len(t) - 2)
        t0, t1 = t[i], t[i + 1]
        hh = t1 - t0
        safe = hh > 0
        hh = np.where(safe, hh, 1.0)
        sq = (xq - t0) / hh
        H[big] = _herm(sq, hh, u[i], u[i + 1], du[i], du[i + 1])
        dH[big] = _herm(sq, hh, du[i], du[i + 1], ddu[i], ddu[i + 1])
        L[big] = ls[i]
    return LimitingSolution(x_grid, H, dH, L, zeros)


def _herm(s, h, u0, u1, d0, d1):
    s2 = s * s
    s3 = s2 * s
    return (2 * s3 - 3 * s2 + 1) * u0 + (s3 - 2 * s2 + s) * h * d0 + (-2 * s3 + 3 * s2) * u1 + (s3 - s2) * h * d1


def _zeros(t, u, du) -> np.ndarray:
    out = []
    for j in np.nonzero(np.sign(u[:-1]) * np.sign(u[1:]) < 0)[0]:
        h = t[j + 1] - t[j]
        if h <= 0:
            continue
        g = lambda s: _herm(s, h, u[j], u[j + 1], du[j], du[j + 1])  # noqa: E731
        lo, hi = 0.0, 1.0
        glo = g(lo)
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            gm = g(mid)
            if np.sign(gm) == np.sign(glo):
                lo, glo = mid, gm
            else:
                hi = mid
        out.append(t[j] + 0.5 * (lo + hi) * h)
    return np.asarray(out)


# --- admissibility -------------------------------------------------------------


def condition_threshold(m: int) -> float:
    return (math.sqrt(2.0) - 1.0) / 2.0 * (m - 2)


def check_condition(m: int, l: int, config: IntegratorConfig | None = None) -> ConditionReport:
    """Analytic test l > (sqrt2 - 1)(m - 2)/2 plus the oscillation cross-check.

    The numerical check counts zeros of H on [0, 30] and [0, 60]; the
    equation oscillates iff the count keeps growing.
    """
    if isinstance(m, bool) or isinstance(l, bool) or int(m) != m or int(l) != l:
        raise TypeError("m and l must be integers")
    m, l = int(m), int(l)
    if m % 2 == 0:
        raise EvenDimensionError(f"m must be odd (got m={m})")
    params = EquationParams(m=m, l=l)
    threshold = condition_threshold(m)
    sol = limiting_H(params, np.array([30.0, 60.0]), config)
    n30 = int(np.sum(sol.zeros <= 30.0))
    n60 = int(np.sum(sol.zeros <= 60.0))
    return ConditionReport(m, l, threshold, l > threshold, n60 > n30)
