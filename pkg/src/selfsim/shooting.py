"""Orbit classification, bisection for the shooting parameters and
two-sided refinement of the connecting orbits.

Raw orbits are launched from the light cone with ``beta > 0``; the n-th
connecting orbit then has n zeros of h and tends to ``(-1)^n pi/2``.
Converged solutions are reflected so that f(0) = 0 with slope ``a > 0``.
"""

from __future__ import annotations

import enum
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .ode import (
    HALF_PI,
    Coordinate,
    EquationParams,
    EventKind,
    IntegratorConfig,
    PhaseState,
    StepFailure,
    Termination,
    Trajectory,
    detect_events,
    integrate,
    one_minus_rho,
    origin_coefficient,
    series_lightcone,
    series_origin,
)


class ClassificationError(RuntimeError):
    pass


class BracketNotFound(RuntimeError):
    pass


class NewtonDivergence(RuntimeError):
    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class Fate(enum.Enum):
    ESCAPED_PLUS = "EscapedPlus"
    ESCAPED_MINUS = "EscapedMinus"
    TRAPPED = "Trapped"


@dataclass(frozen=True)
class OrbitClass:
    beta: float
    fate: Fate
    zero_count: int
    escape_x: float | None = None

    @property
    def escaped(self) -> bool:
        return self.fate is not Fate.TRAPPED


@dataclass(frozen=True)
class ShooterConfig:
    n_max: int = 4
    bracket_growth: float = 1.3
    beta_start: float = 1e-6
    beta_floor: float = 1e-30
    bisect_tol: float = 1e-10
    newton_tol: float = 1e-10
    newton_max_iter: int = 40
    fd_step: float = 1e-6
    fit_point: float = 0.5
    n_cap: int = 8

    def __post_init__(self):
        if not 0 < self.fit_point < 1:
            raise ValueError("fit_point must lie in (0, 1)")
        if self.bisect_tol <= 0 or self.newton_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.bracket_growth <= 1:
            raise ValueError("bracket_growth must exceed 1")
        if not 0 <= self.n_max <= self.n_cap:
            raise ValueError(f"n_max must lie in [0, {self.n_cap}]")


@dataclass
class ConnectingOrbit:
    """A converged profile f_n on [0, 1] with its shooting data.

    ``b_rho`` follows f ~ pi/2 - b_rho (1 - rho)^((m-1)/2) near the light
    cone, which for m = 3 is the familiar f ~ pi/2 + b_rho (rho - 1).
    """

    params: EquationParams
    n: int
    beta_x: float
    a: float
    b_rho: float
    profile: Trajectory
    rho_left: float
    x_right: float
    energy: float | None = None
    newton_iterations: int = 0
    mismatch: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def crossing_count(self) -> int:
        return len(self.profile.crossings)

    @property
    def extremum_count(self) -> int:
        return len(self.profile.events_of(EventKind.EXTREMUM))

    def evaluate(self, rho):
        """(f, f') anywhere in (0, 1); endpoint series outside the profile span."""
        rho = np.asarray(rho, dtype=float)
        f = np.empty_like(rho)
        df = np.empty_like(rho)
        lo, hi = self.profile.span
        left = rho < lo
        right = rho > hi
        mid = ~(left | right)
        if np.any(mid):
            s = self.profile(rho[mid])
            f[mid], df[mid] = s.u, s.du
        if np.any(left):
            s = series_origin(self.params, self.a, rho[left])
            f[left], df[left] = s.u, s.du
        if np.any(right):
            x = np.arccosh(1.0 / rho[right])
            h, dh = series_lightcone(self.params, self.beta_x, x)
            f[right] = HALF_PI + h
            df[right] = -dh * np.cosh(x) / np.tanh(x)
        if rho.ndim == 0:
            return PhaseState(float(f), float(df))
        return PhaseState(f, df)

    def boundary_residuals(self) -> tuple[float, float]:
        """Relative disagreement of the profile end slopes with (a, b_rho)."""
        l, m = self.params.l, self.params.m
        t = self.profile.t
        i0 = 0 if t[0] < t[-1] else -1
        i1 = -1 if i0 == 0 else 0
        rho0 = t[i0]
        a_est = self.profile.u[i0] / rho0**l
        res_a = abs(a_est - self.a) / abs(self.a)
        y = float(one_minus_rho(self.x_right))
        b_est = self.profile.du[i1] / ((m - 1) / 2.0 * y ** ((m - 3) / 2.0))
        res_b = abs(b_est - self.b_rho) / abs(self.b_rho)
        return res_a, res_b


def worker_count() -> int:
    cap = os.environ.get("SELFSIM_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return n


# --- classification ----------------------------------------------------------


def classify_orbit(params: EquationParams, beta: float, config: IntegratorConfig | None = None) -> OrbitClass:
    """Fate and zero count of the beta-orbit launched from the light cone."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    config = config or IntegratorConfig()
    traj = beta_orbit(params, beta, config, stop_on_escape=True)
    return _classify(traj, beta)


def beta_orbit(params: EquationParams, beta: float, config: IntegratorConfig, *, stop_on_escape=False, x_end=None) -> Trajectory:
    x0 = config.launch_eps
    try:
        return integrate(
            params, Coordinate.X, x0, series_lightcone(params, beta, x0), x_end, config, stop_on_escape=stop_on_escape
        )
    except StepFailure as exc:
        raise ClassificationError(f"integration failed for beta={beta:.17g}: {exc}") from exc


def _classify(traj: Trajectory, beta: float) -> OrbitClass:
    zeros = len(traj.crossings)
    if traj.termination is Termination.ESCAPED_PLUS:
        return OrbitClass(beta, Fate.ESCAPED_PLUS, zeros, float(traj.t[-1]))
    if traj.termination is Termination.ESCAPED_MINUS:
        return OrbitClass(beta, Fate.ESCAPED_MINUS, zeros, float(traj.t[-1]))
    if np.any(np.abs(traj.u) >= HALF_PI):
        # crossed the saddle level without W reaching the margin by x_max
        fate = Fate.ESCAPED_PLUS if traj.u[-1] > 0 else Fate.ESCAPED_MINUS
        return OrbitClass(beta, fate, zeros, float(traj.t[-1]))
    return OrbitClass(beta, Fate.TRAPPED, zeros, None)


# --- bracketing and bisection ------------------------------------------------


def _map(fun, items):
    items = list(items)
    workers = worker_count()
    if workers <= 1 or len(items) < 2:
        return [fun(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fun, items))


def scan_betas(
    params: EquationParams,
    n_max: int,
    shooter: ShooterConfig | None = None,
    config: IntegratorConfig | None = None,
) -> list[OrbitClass]:
    """Classify a geometric beta grid covering zero counts 0..n_max+1.

    The grid runs upward from ``beta_start`` until an orbit escapes with no
    zero, and downward until one has more than ``n_max`` zeros.
    """
    shooter = shooter or ShooterConfig()
    config = config or IntegratorConfig()
    g = shooter.bracket_growth

    def cls(b):
        return classify_orbit(params, b, config)

    beta = shooter.beta_start
    grid = [cls(beta)]
    while not (grid[-1].escaped and grid[-1].zero_count == 0):
        beta *= g
        if beta > 1e12:
            raise BracketNotFound("no beta with a monotone escape found below 1e12")
        grid.append(cls(beta))
    beta = shooter.beta_start
    while grid[0].zero_count <= n_max:
        beta /= g
        if beta < shooter.beta_floor:
            raise BracketNotFound(
                f"zero count never exceeds {n_max} for beta >= {shooter.beta_floor:g}; "
                "the oscillation condition may be violated"
            )
        grid.insert(0, cls(beta))
    return grid


def _below(oc: OrbitClass, n: int) -> bool:
    """True on the large-beta side of beta_n."""
    return oc.zero_count <= n


def find_beta_n(
    params: EquationParams,
    n: int,
    shooter: ShooterConfig | None = None,
    config: IntegratorConfig | None = None,
    scan: list[OrbitClass] | None = None,
) -> tuple[float, float, float]:
    """Bisect on beta until the n / n+1 zero-count transition is pinned.

    Returns ``(beta_lo, beta_hi, beta_n)``; orbits at ``beta_hi`` have at
    most n zeros, orbits at ``beta_lo`` more than n.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    shooter = shooter or ShooterConfig()
    config = config or IntegratorConfig()
    if scan is None:
        scan = scan_betas(params, n, shooter, config)
    lo = hi = None
    for left, right in zip(scan[:-1], scan[1:]):
        if not _below(left, n) and _below(right, n):
            lo, hi = left.beta, right.beta
    if lo is None:
        raise BracketNotFound(f"no zero-count transition {n + 1} -> {n} in the beta scan")
    while (hi - lo) > shooter.bisect_tol * hi:
        mid = 0.5 * (lo + hi)
        oc = classify_orbit(params, mid, config)
        if oc.fate is Fate.TRAPPED:
            lo = hi = mid
            break
        if _below(oc, n):
            hi = mid
        else:
            lo = mid
    return lo, hi, 0.5 * (lo + hi)


def find_betas(
    params: EquationParams,
    n_max: int,
    shooter: ShooterConfig | None = None,
    config: IntegratorConfig | None = None,
) -> list[float]:
    """beta_0 > beta_1 > ... > beta_{n_max} from one shared scan."""
    shooter = shooter or ShooterConfig()
    config = config or IntegratorConfig()
    scan = scan_betas(params, n_max, shooter, config)
    betas = _map(lambda n: find_beta_n(params, n, shooter, config, scan)[2], range(n_max + 1))
    for b0, b1 in zip(betas[:-1], betas[1:]):
        if not b1 < b0:
            raise BracketNotFound(f"shooting parameters not decreasing: {betas}")
    return betas


# --- parameter conversion ----------------------------------------------------


def convert_parameters(params: EquationParams, beta_x: float) -> float:
    """Light-cone slope in rho coordinates from the signed x coefficient.

    With 1 - rho = x^2/2 + O(x^4), h ~ beta x^(m-1) becomes
    f ~ pi/2 + beta 2^((m-1)/2) (1 - rho)^((m-1)/2).
    """
    return -beta_x * 2.0 ** ((params.m - 1) / 2.0)


def beta_from_b(params: EquationParams, b_rho: float) -> float:
    return -b_rho / 2.0 ** ((params.m - 1) / 2.0)


# --- two-sided refinement ----------------------------------------------------


def _left_start(params: EquationParams, a: float, config: IntegratorConfig) -> float:
    # keep the dropped series terms (~ c1 rho^2 relative) far below newton_tol
    c1 = abs(origin_coefficient(params, a))
    return min(config.origin_eps, 1e-5 / (1.0 + math.sqrt(c1)), (1e-3 / a) ** (1.0 / params.l))


def _right_start(config: IntegratorConfig) -> float:
    return math.sqrt(2.0 * config.lightcone_gap)


def _shoot_left(params, a, rho_mid, config):
    rho0 = _left_start(params, a, config)
    return integrate(params, Coordinate.RHO, rho0, series_origin(params, a, rho0), rho_mid, config)


def _shoot_right(params, b_rho, rho_mid, config):
    # run in x: near the light cone 1 - rho is only resolved to ~ulp(1)/(1 - rho) as a double
    x0 = _right_start(config)
    x_mid = math.acosh(1.0 / rho_mid)
    return integrate(params, Coordinate.X, x0, series_lightcone(params, beta_from_b(params, b_rho), x0), x_mid, config)


def _x_to_rho_slope(x, dh):
    # df/drho = dh/dx * dx/drho with dx/drho = -cosh(x) / tanh(x)
    return -dh * np.cosh(x) / np.tanh(x)


def _mismatch(params, a, b, rho_mid, config):
    left = _shoot_left(params, a, rho_mid, config)
    right = _shoot_right(params, b, rho_mid, config)
    x_mid = right.t[-1]
    r = np.array([(left.u[-1] - HALF_PI) - right.u[-1], left.du[-1] - _x_to_rho_slope(x_mid, right.du[-1])])
    return r, left, right


def initial_guess(params: EquationParams, beta: float, n: int, config: IntegratorConfig) -> tuple[float, float, float]:
    """(beta_x, a, b_rho) guesses from the raw orbit at the bisected beta.

    The raw orbit lingers near the saddle h = (-1)^n pi/2 before leaving;
    along that plateau f/rho^l is nearly constant and equals ``a``.
    """
    sign = -1.0 if n % 2 == 0 else 1.0
    beta_x = sign * beta
    traj = beta_orbit(params, beta, config, stop_on_escape=True)
    h = sign * traj.u
    x = traj.t
    rho = 1.0 / np.cosh(x)
    f = HALF_PI + h
    plateau = (np.abs(f) < 0.2) & (x > 1.0)
    if not np.any(plateau):
        raise NewtonDivergence(f"raw orbit for n={n} never approaches the saddle")
    idx = np.nonzero(plateau)[0]
    # the plateau ends where the unstable mode takes over; use its flattest part
    g = f[idx] / rho[idx] ** params.l
    if len(idx) > 2:
        slope = np.abs(np.gradient(np.log(np.abs(g)), x[idx]))
        j = int(np.argmin(slope))
    else:
        j = 0
    a = float(abs(g[j]))
    return beta_x, a, convert_parameters(params, beta_x)


def refine_two_sided(
    params: EquationParams,
    beta_n: float,
    n: int,
    shooter: ShooterConfig | None = None,
    config: IntegratorConfig | None = None,
) -> ConnectingOrbit:
    """Newton on (a, b_rho) matching left/right shots at the fitting point."""
    shooter = shooter or ShooterConfig()
    config = config or IntegratorConfig()
    rho_mid = shooter.fit_point
    _, a, b = initial_guess(params, beta_n, n, config)
    x = np.array([a, b])

    def resid(v):
        return _mismatch(params, v[0], v[1], rho_mid, config)

    r, left, right = resid(x)
    norm = float(np.linalg.norm(r))
    it = 0
    while norm > shooter.newton_tol:
        if it >= shooter.newton_max_iter:
            raise NewtonDivergence(f"no convergence for n={n} after {it} iterations", norm)
        it += 1
        jac = np.empty((2, 2))
        for j in range(2):
            d = shooter.fd_step * max(abs(x[j]), 1e-8)
            e = np.zeros(2)
            e[j] = d
            jac[:, j] = (resid(x + e)[0] - resid(x - e)[0]) / (2 * d)
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError as exc:
            raise NewtonDivergence(f"singular Jacobian for n={n}", norm) from exc
        lam = 1.0
        while True:
            trial = x + lam * step
            if trial[0] > 0:
                try:
                    r_t, l_t, rt_t = resid(trial)
                    if np.linalg.norm(r_t) < norm or lam < 1e-3:
                        break
                except StepFailure:
                    pass
            lam *= 0.5
            if lam < 1e-6:
                raise NewtonDivergence(f"line search failed for n={n}", norm)
        x, r, left, right = trial, r_t, l_t, rt_t
        norm = float(np.linalg.norm(r))

    a, b = float(x[0]), float(x[1])
    if a <= 0:
        raise NewtonDivergence(f"converged to a <= 0 for n={n}", norm)
    profile = join_profiles(left, right, params)
    orbit = ConnectingOrbit(
        params=params,
        n=n,
        beta_x=beta_from_b(params, b),
        a=a,
        b_rho=b,
        profile=profile,
        rho_left=float(left.t[0]),
        x_right=_right_start(config),
        newton_iterations=it,
        mismatch=norm,
        diagnostics={"beta_bisection": beta_n},
    )
    return orbit


def join_profiles(left: Trajectory, right: Trajectory, params: EquationParams | None = None) -> Trajectory:
    """Glue an outward RHO shot and an inward light-cone shot at their common end.

    The light-cone shot may be an X run (h against x); its nodes are then
    mapped to rho, with f'' taken from the profile equation.
    """
    if right.coordinate is Coordinate.X:
        if params is None:
            raise ValueError("params are needed to convert an X shot")
        x = right.t[::-1]
        rho = 1.0 / np.cosh(x)
        one_m = np.tanh(x) ** 2  # 1 - rho^2 without cancellation
        f = HALF_PI + right.u[::-1]
        df = _x_to_rho_slope(x, right.du[::-1])
        drift = (params.m - 1.0) / rho + (params.m - 3.0) * rho / one_m
        ddf = -drift * df + params.k * np.sin(2.0 * f) / (rho * rho * one_m)
        rt, ru, rdu, rddu = rho, f, df, ddf
    else:
        rt, ru, rdu, rddu = right.t[::-1], right.u[::-1], right.du[::-1], right.ddu[::-1]
    keep = rt > left.t[-1]
    # rho nodes within an ulp of 1 can collide; keep a strictly increasing set
    keep[1:] &= np.diff(rt) > 0
    t = np.concatenate([left.t, rt[keep]])
    u = np.concatenate([left.u, ru[keep]])
    du = np.concatenate([left.du, rdu[keep]])
    ddu = np.concatenate([left.ddu, rddu[keep]])
    traj = Trajectory(Coordinate.RHO, t, u, du, ddu, Termination.REACHED_END, center=HALF_PI)
    traj.events = detect_events(traj)
    return traj


def solve_orbits(
    params: EquationParams,
    n_max: int,
    shooter: ShooterConfig | None = None,
    config: IntegratorConfig | None = None,
) -> list[ConnectingOrbit]:
    """Bisection then refinement for n = 0..n_max."""
    shooter = shooter or ShooterConfig()
    config = config or IntegratorConfig()
    if n_max > shooter.n_cap:
        raise ValueError(f"n_max={n_max} exceeds the cap of {shooter.n_cap}")
    betas = find_betas(params, n_max, shooter, config)
    return _map(lambda n: refine_two_sided(params, betas[n], n, shooter, config), range(n_max + 1))
