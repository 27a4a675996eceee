"""Linear stability of the m = 3, l = 1 profiles.

Perturbations v(rho) e^{lambda tau} of f_n satisfy

    v'' + (2/rho) v' + [(1 - lambda^2)/(1 - rho^2)^2
                        - 2 cos(2 f_n)/(rho^2 (1 - rho^2))] v = 0,

with v ~ rho at the origin and v ~ (1 - rho)^((1 + |lambda|)/2) at the light
cone.  Positive lambda^2 solving this are unstable modes.  Shooting uses the
Pruefer phase theta (v = R sin theta, rho^2 v' = R cos theta), which is
monotone in lambda^2 and never divides by v, so eigenvalues are exactly the
points where the left/right phase difference hits a multiple of pi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from . import _kernels as K
from .ode import DomainError, IntegratorConfig, PhaseState, run_kernel
from .observables import _herm
from .quadrature import integrate_panels
from .shooting import ConnectingOrbit, _map


class CountMismatch(RuntimeError):
    def __init__(self, message, eigenvalues, expected):
        super().__init__(message)
        self.eigenvalues = eigenvalues
        self.expected = expected


@dataclass(frozen=True)
class EigenShotConfig:
    lambda2_min: float = 1e-6
    lambda2_max: float = 1e5
    grid_count: int = 400
    lambda2_ceiling: float = 1e12  # adaptive extension stops here
    match_point: float = 0.5
    secant_tol: float = 1e-9  # relative
    left_offset: float = 1e-6
    right_offset: float = 1e-6
    stiff_lambda2: float = 1e3  # right shots above this use the implicit integrator
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)

    def __post_init__(self):
        if not 0 < self.match_point < 1:
            raise ValueError("match_point must lie in (0, 1)")
        if not 0 < self.lambda2_min < self.lambda2_max <= self.lambda2_ceiling:
            raise ValueError("need 0 < lambda2_min < lambda2_max <= lambda2_ceiling")
        if self.grid_count < 2:
            raise ValueError("grid_count must be at least 2")


@dataclass
class SpectrumResult:
    n: int
    eigenvalues: list[float]
    gauge_residual: float
    gauge_zero_count: int
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Mismatch:
    log_derivative: float
    phase: float
    node_collision: bool


def _require_m3(orbit: ConnectingOrbit):
    p = orbit.params
    if (p.m, p.l) != (3, 1):
        raise DomainError("stability analysis is implemented for m=3, l=1 only")


def _profile_arrays(orbit: ConnectingOrbit):
    prof = orbit.profile
    if prof.direction < 0:
        return prof.t[::-1].copy(), prof.u[::-1].copy(), prof.du[::-1].copy()
    return prof.t, prof.u, prof.du


# --- equation ------------------------------------------------------------------


def eigen_rhs(orbit: ConnectingOrbit, lambda2: float, rho: float, s: PhaseState) -> PhaseState:
    """(v', v'') of the perturbation equation at ``rho``."""
    if not 0 < rho < 1:
        raise DomainError(f"rho must lie in (0, 1), got {rho}")
    pt, pu, pdu = _profile_arrays(orbit)
    d = K.rhs(K.KIND_EIGEN, float(rho), float(s[0]), float(s[1]), orbit.params.packed(lambda2), pt, pu, pdu)
    return PhaseState(*d)


def _right_launch(lambda2: float, offset: float):
    gamma = 0.5 * (1.0 + math.sqrt(lambda2))
    # c y stays small for steep exponents
    y = min(offset, 1e-3 / gamma)
    c = (gamma * gamma + gamma - 1.0) / (2.0 * gamma)
    rho = 1.0 - y
    theta = math.atan2(y * (1.0 + c * y), -rho * rho * (gamma + (gamma + 1.0) * c * y))
    return rho, theta, gamma, c


@dataclass
class _PhaseRun:
    t: np.ndarray
    theta: np.ndarray
    log_r: np.ndarray
    dtheta: np.ndarray
    dlog_r: np.ndarray

    def at(self, rho):
        t, th, lr, dth, dlr = self.t, self.theta, self.log_r, self.dtheta, self.dlog_r
        if t[0] > t[-1]:
            t, th, lr, dth, dlr = t[::-1], th[::-1], lr[::-1], dth[::-1], dlr[::-1]
        rho = np.asarray(rho, dtype=float)
        i = np.clip(np.searchsorted(t, rho) - 1, 0, len(t) - 2)
        h = t[i + 1] - t[i]
        s = (rho - t[i]) / h
        return _herm(s, h, th[i], th[i + 1], dth[i], dth[i + 1]), _herm(s, h, lr[i], lr[i + 1], dlr[i], dlr[i + 1])


def _phase_shots(
    orbit: ConnectingOrbit,
    lambda2: float,
    config: EigenShotConfig,
    left_end: float | None = None,
    right_end: float | None = None,
):
    """Left shot from the origin to ``left_end`` and right shot from the
    light cone to ``right_end`` (both default to the match point)."""
    left_end = config.match_point if left_end is None else left_end
    right_end = config.match_point if right_end is None else right_end
    prof = _profile_arrays(orbit)
    packed = orbit.params.packed(lambda2)
    ic = config.integrator
    r0 = config.left_offset
    left = run_kernel(K.KIND_PRUFER, packed, r0, (math.atan2(r0, r0 * r0), 0.0), left_end, ic, profile=prof)
    r1, th1, _, _ = _right_launch(lambda2, config.right_offset)
    if lambda2 > config.stiff_lambda2:
        # the light-cone branch attracts at rate ~|lambda|/(1 - rho); explicit steps would be tiny
        right = K.sdirk_prufer(packed, r1, th1, 0.0, right_end, ic.rel_tol, ic.abs_tol, 0.0, ic.h_min, ic.max_steps, *prof)
    else:
        right = run_kernel(K.KIND_PRUFER, packed, r1, (th1, 0.0), right_end, ic, profile=prof)
    for run in (left, right):
        if run[5] != K.REACHED_END:
            raise RuntimeError(f"phase integration failed at rho={run[0][-1]:.6g} for lambda^2={lambda2:.6g}")
    return _PhaseRun(*left[:3], left[3], left[4]), _PhaseRun(*right[:3], right[3], right[4])


def phase_mismatch(orbit: ConnectingOrbit, lambda2: float, config: EigenShotConfig | None = None) -> float:
    """theta_left - theta_right at the match point; eigenvalues sit on multiples of pi."""
    config = config or EigenShotConfig()
    left, right = _phase_shots(orbit, lambda2, config)
    return float(left.theta[-1] - right.theta[-1])


def eigen_mismatch(orbit: ConnectingOrbit, lambda2: float, config: EigenShotConfig | None = None) -> Mismatch:
    """Log-derivative difference v'/v (left minus right) at the match point.

    ``node_collision`` is set when either v is (nearly) zero there; the phase
    difference, reduced to (-pi/2, pi/2], remains meaningful in that case.
    """
    _require_m3(orbit)
    if not lambda2 > 0:
        raise DomainError("eigenfunctions need lambda^2 > 0")
    config = config or EigenShotConfig()
    left, right = _phase_shots(orbit, lambda2, config)
    rho = config.match_point
    tl, tr = left.theta[-1], right.theta[-1]
    collision = min(abs(math.sin(tl)), abs(math.sin(tr))) < 1e-8
    if collision:
        logd = math.nan
    else:
        logd = (1.0 / math.tan(tl) - 1.0 / math.tan(tr)) / (rho * rho)
    d = tl - tr
    phase = d - math.pi * math.floor(d / math.pi + 0.5)
    return Mismatch(logd, phase, collision)


# --- spectrum ------------------------------------------------------------------


def _scan(orbit, grid, config):
    return np.array(_map(lambda lam2: phase_mismatch(orbit, lam2, config), list(grid)))


def find_spectrum(orbit: ConnectingOrbit, config: EigenShotConfig | None = None, *, check_count: bool = True) -> SpectrumResult:
    """All eigenvalues lambda^2 > 0, found by bracketing phase levels k*pi.

    The phase difference decreases with lambda^2 and equals j0*pi at
    lambda^2 = 0 (the gauge mode), so the k-th eigenvalue solves
    F(lambda^2) = (j0 - k) pi.  The scan is extended by decades past
    ``lambda2_max`` while fewer than n eigenvalues are enclosed.
    """
    _require_m3(orbit)
    config = config or EigenShotConfig()
    f0 = phase_mismatch(orbit, 0.0, config)
    j0 = round(f0 / math.pi)
    grid = np.geomspace(config.lambda2_min, config.lambda2_max, config.grid_count)
    values = _scan(orbit, grid, config)
    top = config.lambda2_max
    while check_count and _level_count(values, j0) < orbit.n and top < config.lambda2_ceiling:
        new_top = min(top * 10.0, config.lambda2_ceiling)
        extra = np.geomspace(top, new_top, max(2, config.grid_count // 10) + 1)[1:]
        grid = np.concatenate([grid, extra])
        values = np.concatenate([values, _scan(orbit, extra, config)])
        top = new_top

    eigenvalues = []
    for k in range(1, _level_count(values, j0) + 1):
        target = (j0 - k) * math.pi
        idx = np.nonzero((values[:-1] - target) * (values[1:] - target) <= 0)[0]
        if len(idx) == 0:
            continue
        i = idx[0]
        lo, hi = grid[i], grid[i + 1]
        root = brentq(
            lambda lam2: phase_mismatch(orbit, lam2, config) - target,
            lo,
            hi,
            xtol=config.secant_tol * lo * 1e-3,
            rtol=config.secant_tol,
        )
        eigenvalues.append(float(root))

    gauge = gauge_mode(orbit, np.linspace(0.01, 0.99, 981))
    result = SpectrumResult(
        n=orbit.n,
        eigenvalues=eigenvalues,
        gauge_residual=gauge_residual(orbit),
        gauge_zero_count=gauge.zero_count,
        diagnostics={
            "phase_at_zero": f0,
            "gauge_phase_defect": abs(f0 - j0 * math.pi),
            "scan_top": float(top),
            "monotone": bool(np.all(np.diff(values) <= 1e-9)),
        },
    )
    if check_count and len(eigenvalues) != orbit.n:
        raise CountMismatch(
            f"found {len(eigenvalues)} eigenvalues for n={orbit.n} up to lambda^2={top:.3g}", eigenvalues, orbit.n
        )
    return result


def _level_count(values, j0) -> int:
    # number of levels (j0 - k) pi, k >= 1, crossed by the scanned phase
    lowest = float(np.min(values))
    return max(0, int(math.floor(j0 - lowest / math.pi + 1e-12)))


# --- eigenfunctions ---------------------------------------------------------------


@dataclass
class Eigenfunction:
    """A mode glued from left and right phase shots, scaled so that the
    sampled max |v| is 1.  Outside the shot span the endpoint laws
    v ~ c rho and v ~ c (1 - rho)^gamma are used."""

    lambda2: float
    left: _PhaseRun
    right: _PhaseRun
    match: float
    shift: float  # added to the right log-amplitude
    sign: float  # applied to the right branch
    scale: float  # subtracted from the log-amplitude
    gamma: float
    phase_defect: float = 0.0  # |sin(theta_left - theta_right)| at the glue point

    @property
    def span(self) -> tuple[float, float]:
        return float(self.left.t[0]), float(self.right.t[0])

    def _inside(self, rho):
        th = np.empty_like(rho)
        lr = np.empty_like(rho)
        sg = np.ones_like(rho)
        lm = rho < self.match
        if np.any(lm):
            th[lm], lr[lm] = self.left.at(rho[lm])
        if np.any(~lm):
            th[~lm], lr_r = self.right.at(rho[~lm])
            lr[~lm] = lr_r + self.shift
            sg[~lm] = self.sign
        amp = np.exp(lr - self.scale)
        return sg * amp * np.sin(th), sg * amp * np.cos(th) / (rho * rho)

    def __call__(self, rho):
        rho = np.atleast_1d(np.asarray(rho, dtype=float))
        lo, hi = self.span
        v = np.zeros_like(rho)
        dv = np.zeros_like(rho)
        mid = (rho >= lo) & (rho <= hi)
        if np.any(mid):
            v[mid], dv[mid] = self._inside(rho[mid])
        left = (rho < lo) & (rho > 0)
        if np.any(left):
            v0, _ = self._inside(np.array([lo]))
            v[left] = v0[0] * rho[left] / lo
            dv[left] = v0[0] / lo
        right = (rho > hi) & (rho < 1)
        if np.any(right):
            v1, _ = self._inside(np.array([hi]))
            y0 = 1.0 - hi
            y = 1.0 - rho[right]
            v[right] = v1[0] * (y / y0) ** self.gamma
            dv[right] = -self.gamma * v1[0] / y0 * (y / y0) ** (self.gamma - 1.0)
        return v, dv

    def local_exponent(self, y: float) -> float:
        """d ln v / d ln(1 - rho) at 1 - rho = y."""
        v, dv = self(1.0 - y)
        return float(-y * dv[0] / v[0])


def eigenfunction(orbit: ConnectingOrbit, lambda2: float, config: EigenShotConfig | None = None) -> Eigenfunction:
    """Glue the left and right phase shots into one mode (v, v').

    At large lambda^2 the match point can sit in a classically forbidden
    zone where the left shot is the decaying branch and picks up the
    growing one.  The right shot is therefore run all the way in, and the
    two are glued where their phases agree best modulo pi.
    """
    _require_m3(orbit)
    config = config or EigenShotConfig()
    lo = 4.0 * config.left_offset
    left, right = _phase_shots(orbit, lambda2, config, right_end=lo)
    grid = np.geomspace(lo, config.match_point, 2001)
    th_l, lr_l = left.at(grid)
    th_r, lr_r = right.at(grid)
    delta = th_l - th_r
    i = int(np.argmin(np.abs(np.sin(delta))))
    glue = float(grid[i])
    j = round(delta[i] / math.pi)
    sign = -1.0 if j % 2 else 1.0
    shift = float(lr_l[i] - lr_r[i])
    gamma = 0.5 * (1.0 + math.sqrt(lambda2))
    ef = Eigenfunction(lambda2, left, right, glue, shift, sign, 0.0, gamma)
    ef.scale = float(max(np.max(left.log_r), np.max(right.log_r) + shift))
    probe = np.linspace(config.left_offset, ef.span[1], 4001)
    ef.scale += float(np.log(np.max(np.abs(ef(probe)[0]))))
    ef.phase_defect = float(abs(math.sin(delta[i])))
    return ef


# --- gauge mode -------------------------------------------------------------------


@dataclass
class GaugeMode:
    rho: np.ndarray
    v: np.ndarray
    zero_count: int


def _profile_jets(orbit: ConnectingOrbit, rho):
    """f, f', f'', f''' with the two highest derivatives taken from the ODE."""
    f, df = orbit.evaluate(rho)
    s = 1.0 - rho * rho
    sin2 = np.sin(2.0 * f)
    cos2 = np.cos(2.0 * f)
    ddf = -(2.0 / rho) * df + sin2 / (rho * rho * s)
    d_rho = (2.0 / (rho * rho)) * df - sin2 * (2.0 * rho - 4.0 * rho**3) / (rho * rho * s) ** 2
    d_f = 2.0 * cos2 / (rho * rho * s)
    d_df = -2.0 / rho
    dddf = d_rho + d_f * df + d_df * ddf
    return f, df, ddf, dddf


def gauge_mode(orbit: ConnectingOrbit, rho) -> GaugeMode:
    """v = rho sqrt(1 - rho^2) f'(rho) and its number of zeros in (0, 1).

    v vanishes like sqrt(1 - rho) at the light cone, so it is not square
    integrable against the eigenvalue weight there; it is a symmetry mode,
    not an eigenfunction.
    """
    rho = np.asarray(rho, dtype=float)
    _, df = orbit.evaluate(rho)
    v = rho * np.sqrt((1.0 - rho) * (1.0 + rho)) * df
    prof = orbit.profile
    zeros = int(np.count_nonzero(np.sign(prof.du[:-1]) * np.sign(prof.du[1:]) < 0))
    return GaugeMode(rho, v, zeros)


def gauge_residual(orbit: ConnectingOrbit, rho=None) -> float:
    """max |v'' - A v''| / max |v''| on [0.01, 0.99] for the gauge mode.

    v'' is built from the chain rule on f and compared with the second
    derivative the perturbation equation demands at lambda = 0.
    """
    _require_m3(orbit)
    if rho is None:
        rho = np.linspace(0.01, 0.99, 981)
    rho = np.asarray(rho, dtype=float)
    _, df, ddf, dddf = _profile_jets(orbit, rho)
    s = np.sqrt((1.0 - rho) * (1.0 + rho))
    g = rho * s
    g1 = s - rho * rho / s
    g2 = -3.0 * rho / s - rho**3 / s**3
    v = g * df
    dv = g1 * df + g * ddf
    ddv = g2 * df + 2.0 * g1 * ddf + g * dddf
    f, _ = orbit.evaluate(rho)
    coef = 1.0 / (s**4) - 2.0 * np.cos(2.0 * f) / (rho * rho * s * s)
    demanded = -(2.0 / rho) * dv - coef * v
    return float(np.max(np.abs(ddv - demanded)) / np.max(np.abs(ddv)))


# --- second variation -------------------------------------------------------------


def hessian_form(orbit: ConnectingOrbit, v, *, tol: float = 1e-10) -> float:
    """delta^2 E = 1/2 int_0^1 (rho^2 v'^2 + 2 cos(2 f) v^2 / (1 - rho^2)) drho.

    ``v`` is a callable rho -> (v, v') or a pair (rho_samples, v_samples),
    which is splined.
    """
    _require_m3(orbit)
    if not callable(v):
        r, vs = (np.asarray(a, dtype=float) for a in v)
        spline = CubicSpline(r, vs)
        deriv = spline.derivative()

        def v(x):
            x = np.clip(x, r[0], r[-1])
            return spline(x), deriv(x)

    def integrand(x):
        flat = x.ravel()
        vv, dv = v(flat)
        f, _ = orbit.evaluate(flat)
        out = flat * flat * dv * dv + 2.0 * np.cos(2.0 * f) * vv * vv / ((1.0 - flat) * (1.0 + flat))
        return out.reshape(x.shape)

    edges = np.linspace(0.0, 1.0, 257)
    value, _ = integrate_panels(integrand, edges, tol)
    return 0.5 * float(value)


def weighted_norm2(v: Callable, *, tol: float = 1e-10) -> float:
    """int_0^1 rho^2 v^2 / (1 - rho^2)^2 drho, the eigenvalue weight."""

    def integrand(x):
        flat = x.ravel()
        vv, _ = v(flat)
        s = (1.0 - flat) * (1.0 + flat)
        return (flat * flat * vv * vv / (s * s)).reshape(x.shape)

    value, _ = integrate_panels(integrand, np.linspace(0.0, 1.0, 257), tol)
    return float(value)


__all__ = [
    "CountMismatch",
    "EigenShotConfig",
    "Eigenfunction",
    "GaugeMode",
    "Mismatch",
    "SpectrumResult",
    "eigen_mismatch",
    "eigen_rhs",
    "eigenfunction",
    "find_spectrum",
    "gauge_mode",
    "gauge_residual",
    "hessian_form",
    "phase_mismatch",
    "weighted_norm2",
]
