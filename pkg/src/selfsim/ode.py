"""Profile equations, endpoint series and the adaptive integrator.

Two coordinate systems are used throughout.  ``RHO`` is the similarity
variable on ``[0, 1]`` (0 = centre, 1 = past light cone) with unknown
``f(rho)``; ``X`` is ``x = arcsech(rho)`` on ``[0, inf)`` with unknown
``h(x) = f - pi/2``.  The light cone sits at ``x = 0`` and the centre at
``x = inf``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq

from . import _kernels as K

HALF_PI = 0.5 * math.pi


class DomainError(ValueError):
    """Abscissa outside the open domain of an equation."""


class StepFailure(RuntimeError):
    """The adaptive integrator could not continue (step underflow or step budget)."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass(frozen=True)
class EquationParams:
    """Target dimension ``m`` and equivariance degree ``l``."""

    m: int = 3
    l: int = 1

    def __post_init__(self):
        if int(self.m) != self.m or int(self.l) != self.l:
            raise ValueError("m and l must be integers")
        if self.m < 3:
            raise ValueError(f"m must be >= 3, got {self.m}")
        if self.m % 2 == 0:
            raise ValueError(f"m must be odd, got {self.m}")
        if self.l < 1:
            raise ValueError(f"l must be >= 1, got {self.l}")

    @property
    def k_exact(self) -> Fraction:
        return Fraction(self.l * (self.l + self.m - 2), 2)

    @property
    def k(self) -> float:
        return float(self.k_exact)

    def packed(self, lam2: float = 0.0) -> np.ndarray:
        return np.array([float(self.m), self.k, float(lam2)])


class PhaseState(NamedTuple):
    u: float
    du: float


class Coordinate(enum.Enum):
    RHO = "rho"
    X = "x"


class Termination(enum.Enum):
    REACHED_END = "ReachedEnd"
    ESCAPED_PLUS = "EscapedPlus"
    ESCAPED_MINUS = "EscapedMinus"
    STEP_FAILURE = "StepFailure"


_TERMINATION = {
    K.REACHED_END: Termination.REACHED_END,
    K.ESCAPED_PLUS: Termination.ESCAPED_PLUS,
    K.ESCAPED_MINUS: Termination.ESCAPED_MINUS,
    K.STEP_FAILURE: Termination.STEP_FAILURE,
    K.MAX_STEPS: Termination.STEP_FAILURE,
}


class EventKind(enum.Enum):
    CROSSING = "crossing"  # u passes through the trajectory's reference level
    EXTREMUM = "extremum"  # du changes sign
    W_THRESHOLD = "w_threshold"  # W first exceeds the escape level


@dataclass(frozen=True)
class Event:
    kind: EventKind
    t: float


@dataclass(frozen=True)
class IntegratorConfig:
    """Tolerances, step bounds and launch offsets.

    ``launch_eps`` is the x offset used when shooting from the light cone in
    X coordinates; ``origin_eps`` and ``lightcone_gap`` are the offsets from
    ``rho = 0`` and ``rho = 1`` for RHO runs.  ``w_escape=None`` means
    ``1.01 k``.
    """

    rel_tol: float = 1e-12
    abs_tol: float = 1e-14
    h_init: float = 0.0  # 0 selects the starting step automatically
    h_min: float = 1e-20
    h_max: float = 0.5
    x_max: float = 40.0
    launch_eps: float = 1e-4
    origin_eps: float = 1e-6
    lightcone_gap: float = 1e-10
    w_escape: float | None = None
    max_steps: int = 2_000_000

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if not (0 < self.launch_eps < 1e-2 and 0 < self.origin_eps < 1e-2 and 0 < self.lightcone_gap < 1e-2):
            raise ValueError("launch offsets must satisfy 0 < eps << 1")
        if not (math.isfinite(self.x_max) and self.x_max > 1):
            raise ValueError("x_max must be finite and > 1")

    def escape_level(self, params: EquationParams) -> float:
        return 1.01 * params.k if self.w_escape is None else self.w_escape

    def tightened(self, factor: float) -> "IntegratorConfig":
        from dataclasses import replace

        return replace(self, rel_tol=self.rel_tol * factor, abs_tol=self.abs_tol * factor)


# --- right-hand sides ---------------------------------------------------------


def rhs_x(params: EquationParams, x: float, s: PhaseState) -> PhaseState:
    """First-order form of ``h'' - (m-2) coth(x) h' + k sin(2h) = 0``."""
    if not x > 0:
        raise DomainError(f"x must be positive, got {x}")
    d = K.rhs(K.KIND_X, float(x), float(s[0]), float(s[1]), params.packed(), _NO_PROFILE, _NO_PROFILE, _NO_PROFILE)
    return PhaseState(*d)


def rhs_rho(params: EquationParams, rho: float, s: PhaseState) -> PhaseState:
    """First-order form of the profile equation in the similarity variable."""
    if not 0 < rho < 1:
        raise DomainError(f"rho must lie in (0, 1), got {rho}")
    d = K.rhs(K.KIND_RHO, float(rho), float(s[0]), float(s[1]), params.packed(), _NO_PROFILE, _NO_PROFILE, _NO_PROFILE)
    return PhaseState(*d)


def w_value(s: PhaseState, k: float = 1.0) -> float:
    """W = h'^2/2 + k sin^2 h, nondecreasing along X trajectories."""
    return 0.5 * s[1] ** 2 + k * math.sin(s[0]) ** 2


_NO_PROFILE = np.zeros(2)


# --- endpoint series ---------------------------------------------------------


def origin_coefficient(params: EquationParams, a: float) -> float:
    """c1 in f = a rho^l (1 + c1 rho^2 + ...)."""
    l, m = params.l, params.m
    num = l * (l + 1)
    if l == 1:
        # the cubic term of sin(2f) enters at the same order only for l = 1
        num -= 4.0 / 3.0 * params.k * a * a
    return num / (4 * l + 2 * m)


def series_origin(params: EquationParams, a: float, rho):
    """Launch data (f, f') near rho = 0; truncation error O(rho^(l+4)).

    Accepts scalar or array ``rho``.
    """
    l = params.l
    c1 = origin_coefficient(params, a)
    r2 = np.square(rho)
    f = a * np.power(rho, l) * (1.0 + c1 * r2)
    df = a * np.power(rho, l - 1) * (l + (l + 2) * c1 * r2)
    if np.ndim(rho) == 0:
        return PhaseState(float(f), float(df))
    return PhaseState(f, df)


def lightcone_coefficient(params: EquationParams) -> float:
    """d1 in h = beta x^(m-1) (1 + d1 x^2 + ...)."""
    m = params.m
    return ((m - 2) * (m - 1) / 3.0 - 2.0 * params.k) / (2.0 * (m + 1))


def series_lightcone(params: EquationParams, beta: float, x):
    """Launch data (h, h') near x = 0; truncation error O(x^(m+3))."""
    m = params.m
    d1 = lightcone_coefficient(params)
    x2 = np.square(x)
    h = beta * np.power(x, m - 1) * (1.0 + d1 * x2)
    dh = beta * np.power(x, m - 2) * ((m - 1) + (m + 1) * d1 * x2)
    if np.ndim(x) == 0:
        return PhaseState(float(h), float(dh))
    return PhaseState(h, dh)


def lightcone_rho_state(params: EquationParams, beta: float, x: float) -> tuple[float, PhaseState]:
    """Light-cone launch expressed in RHO coordinates: (rho, (f, f'))."""
    h, dh = series_lightcone(params, beta, x)
    rho = 1.0 / math.cosh(x)
    dx_drho = -math.cosh(x) / math.tanh(x)
    return rho, PhaseState(HALF_PI + h, dh * dx_drho)


def one_minus_rho(x):
    """1 - sech(x) without cancellation."""
    return 2.0 * np.sinh(0.5 * np.asarray(x)) ** 2 / np.cosh(x)


# --- trajectories ------------------------------------------------------------


@dataclass
class Trajectory:
    """Nodes of an accepted-step sequence with a quintic Hermite interpolant.

    ``u``/``du`` are the state and ``ddu`` the second derivative at each node;
    ``u`` is interpolated from value, slope and curvature (O(h^6)) and ``du``
    is the derivative of that interpolant.
    ``center`` is the level whose crossings are tagged as CROSSING events
    (0 for h, pi/2 for f).
    """

    coordinate: Coordinate
    t: np.ndarray
    u: np.ndarray
    du: np.ndarray
    ddu: np.ndarray
    termination: Termination
    center: float = 0.0
    events: list[Event] = field(default_factory=list)
    rejected_steps: int = 0

    def __len__(self):
        return len(self.t)

    @property
    def span(self) -> tuple[float, float]:
        return float(min(self.t[0], self.t[-1])), float(max(self.t[0], self.t[-1]))

    @property
    def direction(self) -> int:
        return 1 if self.t[-1] >= self.t[0] else -1

    def _sorted(self):
        if self.direction > 0:
            return self.t, self.u, self.du, self.ddu
        return self.t[::-1], self.u[::-1], self.du[::-1], self.ddu[::-1]

    def __call__(self, t):
        """Interpolated state at ``t`` (scalar or array)."""
        ts, us, dus, ddus = self._sorted()
        tq = np.asarray(t, dtype=float)
        lo, hi = ts[0], ts[-1]
        if np.any(tq < lo - 1e-12 * abs(lo)) or np.any(tq > hi + 1e-12 * abs(hi)):
            raise DomainError("interpolation outside the trajectory span")
        i = np.clip(np.searchsorted(ts, tq) - 1, 0, len(ts) - 2)
        t0, t1 = ts[i], ts[i + 1]
        u, du = _quintic(tq, t0, t1, us[i], us[i + 1], dus[i], dus[i + 1], ddus[i], ddus[i + 1])
        if tq.ndim == 0:
            return PhaseState(float(u), float(du))
        return PhaseState(u, du)

    def events_of(self, kind: EventKind) -> list[float]:
        return [e.t for e in self.events if e.kind is kind]

    @property
    def crossings(self) -> list[float]:
        return self.events_of(EventKind.CROSSING)

    def w(self, k: float) -> np.ndarray:
        return 0.5 * self.du**2 + k * np.sin(self.u) ** 2


def _quintic(t, t0, t1, u0, u1, d0, d1, e0, e1):
    """Value and slope of the quintic matching (u, u', u'') at both ends."""
    h = t1 - t0
    s = (t - t0) / h
    s2 = s * s
    s3 = s2 * s
    s4 = s3 * s
    s5 = s4 * s
    val = (
        (1 - 10 * s3 + 15 * s4 - 6 * s5) * u0
        + (10 * s3 - 15 * s4 + 6 * s5) * u1
        + h * ((s - 6 * s3 + 8 * s4 - 3 * s5) * d0 + (-4 * s3 + 7 * s4 - 3 * s5) * d1)
        + h * h * ((0.5 * s2 - 1.5 * s3 + 1.5 * s4 - 0.5 * s5) * e0 + (0.5 * s3 - s4 + 0.5 * s5) * e1)
    )
    slope = (
        (-30 * s2 + 60 * s3 - 30 * s4) * (u0 - u1) / h
        + (1 - 18 * s2 + 32 * s3 - 15 * s4) * d0
        + (-12 * s2 + 28 * s3 - 15 * s4) * d1
        + h * ((s - 4.5 * s2 + 6 * s3 - 2.5 * s4) * e0 + (1.5 * s2 - 4 * s3 + 2.5 * s4) * e1)
    )
    return val, slope


def _hermite(t, t0, t1, u0, u1, d0, d1):
    h = t1 - t0
    s = (t - t0) / h
    s2 = s * s
    s3 = s2 * s
    return (2 * s3 - 3 * s2 + 1) * u0 + (s3 - 2 * s2 + s) * h * d0 + (-2 * s3 + 3 * s2) * u1 + (s3 - s2) * h * d1


def _sign_changes(values: np.ndarray) -> np.ndarray:
    s = np.sign(values)
    return np.nonzero(s[:-1] * s[1:] < 0)[0]


def _locate(fun, a, b):
    fa, fb = fun(a), fun(b)
    if fa == 0:
        return a
    if fb == 0:
        return b
    if fa * fb > 0:
        return 0.5 * (a + b)
    return brentq(fun, min(a, b), max(a, b), xtol=1e-15, rtol=4 * np.finfo(float).eps)


def detect_events(traj: Trajectory, k: float | None = None, w_escape: float | None = None) -> list[Event]:
    """Locate crossings of ``center``, extrema and the first W passage."""
    t, u, du, ddu = traj.t, traj.u, traj.du, traj.ddu
    events: list[Event] = []

    def seg_u(i):
        return lambda s: _hermite(s, t[i], t[i + 1], u[i], u[i + 1], du[i], du[i + 1]) - traj.center

    def seg_du(i):
        return lambda s: _hermite(s, t[i], t[i + 1], du[i], du[i + 1], ddu[i], ddu[i + 1])

    for i in _sign_changes(u - traj.center):
        events.append(Event(EventKind.CROSSING, _locate(seg_u(i), t[i], t[i + 1])))
    for i in _sign_changes(du):
        events.append(Event(EventKind.EXTREMUM, _locate(seg_du(i), t[i], t[i + 1])))
    if k is not None and w_escape is not None:
        w = 0.5 * du**2 + k * np.sin(u) ** 2
        above = np.nonzero(w > w_escape)[0]
        if above.size:
            j = above[0]
            if j == 0:
                events.append(Event(EventKind.W_THRESHOLD, float(t[0])))
            else:
                i = j - 1

                def g(s, i=i):
                    uu = _hermite(s, t[i], t[i + 1], u[i], u[i + 1], du[i], du[i + 1])
                    dd = _hermite(s, t[i], t[i + 1], du[i], du[i + 1], ddu[i], ddu[i + 1])
                    return 0.5 * dd * dd + k * math.sin(uu) ** 2 - w_escape

                events.append(Event(EventKind.W_THRESHOLD, _locate(g, t[i], t[i + 1])))
    events.sort(key=lambda e: traj.direction * e.t)
    return events


_KIND = {Coordinate.X: K.KIND_X, Coordinate.RHO: K.KIND_RHO}


def launch_atol(config: IntegratorConfig, state) -> float:
    """Absolute tolerance shrunk to the size of a small launch state.

    Light-cone launches start at ~beta x^(m-1), far below ``abs_tol`` for
    m > 3; without this the first decades of the run have no relative error
    control, which shifts the effective beta.
    """
    mags = [abs(float(v)) for v in state if v != 0.0]
    if not mags:
        return config.abs_tol
    return config.abs_tol * min(1.0, min(mags))


def run_kernel(
    kind: int,
    packed: np.ndarray,
    t0: float,
    state,
    t_end: float,
    config: IntegratorConfig,
    *,
    stop_on_escape: bool = False,
    w_escape: float = np.inf,
    profile: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
    atol: float | None = None,
):
    pt, pu, pdu = profile if profile is not None else (_NO_PROFILE, _NO_PROFILE, _NO_PROFILE)
    return K.dopri5(
        kind,
        packed,
        float(t0),
        float(state[0]),
        float(state[1]),
        float(t_end),
        config.rel_tol,
        config.abs_tol if atol is None else atol,
        config.h_init,
        config.h_min,
        config.h_max,
        config.max_steps,
        stop_on_escape,
        float(w_escape),
        pt,
        pu,
        pdu,
    )


def integrate(
    params: EquationParams,
    coordinate: Coordinate,
    t0: float,
    state: PhaseState,
    t_end: float | None = None,
    config: IntegratorConfig | None = None,
    *,
    stop_on_escape: bool = False,
    raise_on_failure: bool = True,
) -> Trajectory:
    """Integrate the profile equation from ``(t0, state)`` to ``t_end``.

    ``t_end`` defaults to ``config.x_max`` for X runs; it is required for RHO
    runs (the direction follows from its position relative to ``t0``).
    With ``stop_on_escape`` an X run stops once ``|h| > pi/2`` with W above
    the escape level.  A step underflow raises :class:`StepFailure` unless
    ``raise_on_failure`` is false, in which case the partial trajectory is
    returned with termination ``StepFailure``.
    """
    config = config or IntegratorConfig()
    if coordinate is Coordinate.X:
        if not t0 > 0:
            raise DomainError(f"x must be positive, got {t0}")
        if t_end is None:
            t_end = config.x_max
        center = 0.0
    else:
        if not 0 < t0 < 1:
            raise DomainError(f"rho must lie in (0, 1), got {t0}")
        if t_end is None or not 0 < t_end < 1:
            raise DomainError("RHO runs need an end point inside (0, 1)")
        center = HALF_PI
    w_esc = config.escape_level(params)
    ts, ua, ub, fa, fb, status, n_rej = run_kernel(
        _KIND[coordinate],
        params.packed(),
        t0,
        state,
        t_end,
        config,
        stop_on_escape=stop_on_escape and coordinate is Coordinate.X,
        w_escape=w_esc,
        atol=launch_atol(config, state),
    )
    traj = Trajectory(coordinate, ts, ua, ub, fb, _TERMINATION[status], center=center, rejected_steps=n_rej)
    if coordinate is Coordinate.X:
        traj.events = detect_events(traj, params.k, w_esc)
    else:
        traj.events = detect_events(traj)
    if traj.termination is Termination.STEP_FAILURE and raise_on_failure:
        raise StepFailure(f"step underflow at t={ts[-1]:.6g} ({'max steps' if status == K.MAX_STEPS else 'h < h_min'})", traj)
    return traj
