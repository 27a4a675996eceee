"""Compiled numerical kernels: right-hand sides and the Dormand-Prince stepper.

Everything here is scalar, allocation-light and ``nogil`` so independent
integrations can run on worker threads.  The public wrappers live in
:mod:`selfsim.ode`.
"""

import math

import numpy as np
from numba import njit

# right-hand side selectors
KIND_X = 0  # profile equation in x, rho = sech(x), h = f - pi/2
KIND_RHO = 1  # profile equation in rho
KIND_LIN = 2  # small-amplitude limit of the x equation
KIND_EIGEN = 3  # linearisation about a profile, state (v, v')
KIND_PRUFER = 4  # same linearisation in Pruefer variables (theta, log R)

# termination codes
REACHED_END = 0
ESCAPED_PLUS = 1
ESCAPED_MINUS = 2
STEP_FAILURE = 3
MAX_STEPS = 4

HALF_PI = 0.5 * math.pi

# Dormand-Prince 5(4) tableau
C2, C3, C4, C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0
A21 = 1.0 / 5.0
A31, A32 = 3.0 / 40.0, 9.0 / 40.0
A41, A42, A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
A51, A52, A53, A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
A61, A62, A63, A64, A65 = (
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
)
A71, A73, A74, A75, A76 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
E1, E3, E4, E5, E6, E7 = (
    71.0 / 57600.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
)


@njit(cache=True, nogil=True)
def hermite_value(t, t0, t1, u0, u1, d0, d1):
    h = t1 - t0
    s = (t - t0) / h
    s2 = s * s
    s3 = s2 * s
    return (
        (2.0 * s3 - 3.0 * s2 + 1.0) * u0
        + (s3 - 2.0 * s2 + s) * h * d0
        + (-2.0 * s3 + 3.0 * s2) * u1
        + (s3 - s2) * h * d1
    )


@njit(cache=True, nogil=True)
def profile_value(t, pt, pu, pdu):
    """Cubic Hermite value of a tabulated profile (abscissae increasing)."""
    n = pt.shape[0]
    if t <= pt[0]:
        return pu[0] + (t - pt[0]) * pdu[0]
    if t >= pt[n - 1]:
        return pu[n - 1] + (t - pt[n - 1]) * pdu[n - 1]
    i = np.searchsorted(pt, t) - 1
    if i < 0:
        i = 0
    return hermite_value(t, pt[i], pt[i + 1], pu[i], pu[i + 1], pdu[i], pdu[i + 1])


@njit(cache=True, nogil=True)
def rhs(kind, t, y0, y1, p, pt, pu, pdu):
    """Return (y0', y1') for the selected equation.

    ``p`` packs ``[m, k, lambda2]``; ``pt, pu, pdu`` hold the background
    profile for the linearised equations and are ignored otherwise.
    """
    m = p[0]
    k = p[1]
    if kind == KIND_X:
        return y1, (m - 2.0) / math.tanh(t) * y1 - k * math.sin(2.0 * y0)
    if kind == KIND_RHO:
        one_m = (1.0 - t) * (1.0 + t)
        drift = (m - 1.0) / t + (m - 3.0) * t / one_m
        return y1, -drift * y1 + k * math.sin(2.0 * y0) / (t * t * one_m)
    if kind == KIND_LIN:
        return y1, (m - 2.0) / math.tanh(t) * y1 - 2.0 * k * y0
    lam2 = p[2]
    one_m = (1.0 - t) * (1.0 + t)
    f = profile_value(t, pt, pu, pdu)
    c2f = math.cos(2.0 * f)
    if kind == KIND_EIGEN:
        coef = (1.0 - lam2) / (one_m * one_m) - 2.0 * c2f / (t * t * one_m)
        return y1, -2.0 / t * y1 - coef * y0
    # Pruefer: v = R sin(theta), rho^2 v' = R cos(theta)
    pw = t * t
    q = (1.0 - lam2) * pw / (one_m * one_m) - 2.0 * c2f / one_m
    s = math.sin(y0)
    c = math.cos(y0)
    return c * c / pw + q * s * s, (1.0 / pw - q) * s * c


@njit(cache=True, nogil=True)
def _initial_step(kind, p, pt, pu, pdu, t0, y0, y1, f0, f1, direction, rtol, atol, span):
    # Hairer-Norsett-Wanner starting step heuristic
    sc0 = atol + rtol * abs(y0)
    sc1 = atol + rtol * abs(y1)
    d0 = math.sqrt(0.5 * ((y0 / sc0) ** 2 + (y1 / sc1) ** 2))
    d1 = math.sqrt(0.5 * ((f0 / sc0) ** 2 + (f1 / sc1) ** 2))
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    h0 = min(h0, span, 0.5 * abs(t0) if t0 != 0.0 else span)
    g0, g1 = rhs(kind, t0 + direction * h0, y0 + direction * h0 * f0, y1 + direction * h0 * f1, p, pt, pu, pdu)
    d2 = math.sqrt(0.5 * (((g0 - f0) / sc0) ** 2 + ((g1 - f1) / sc1) ** 2)) / h0
    dm = max(d1, d2)
    if dm <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / dm) ** 0.2
    return min(100.0 * h0, h1, span)


@njit(cache=True, nogil=True)
def dopri5(
    kind,
    p,
    t0,
    y0,
    y1,
    t_end,
    rtol,
    atol,
    h_init,
    h_min,
    h_max,
    max_steps,
    stop_on_escape,
    w_escape,
    pt,
    pu,
    pdu,
):
    """Adaptive Dormand-Prince 5(4) with PI step control.

    Returns node arrays ``(t, y0, y1, dy0, dy1)`` (the derivatives make a
    cubic Hermite interpolant per step), a termination code and the number
    of rejected steps.  With ``stop_on_escape`` the run ends at the first
    node where ``|y0| > pi/2`` and ``y1^2/2 + k sin^2 y0 > w_escape``.
    """
    k_coup = p[1]
    direction = 1.0 if t_end >= t0 else -1.0
    span = abs(t_end - t0)

    cap = 1024
    ts = np.empty(cap)
    ya = np.empty(cap)
    yb = np.empty(cap)
    fa = np.empty(cap)
    fb = np.empty(cap)

    f0, f1 = rhs(kind, t0, y0, y1, p, pt, pu, pdu)
    ts[0] = t0
    ya[0] = y0
    yb[0] = y1
    fa[0] = f0
    fb[0] = f1
    n = 1
    status = REACHED_END
    n_rej = 0

    if span == 0.0:
        return ts[:n], ya[:n], yb[:n], fa[:n], fb[:n], status, n_rej

    if h_init > 0.0:
        h = min(h_init, span)
    else:
        h = _initial_step(kind, p, pt, pu, pdu, t0, y0, y1, f0, f1, direction, rtol, atol, span)
    h = min(h, h_max)

    t = t0
    facold = 1e-4
    beta = 0.04
    expo1 = 0.2 - 0.75 * beta
    safe = 0.9
    steps = 0
    last = False
    rejected_prev = False

    while True:
        if steps >= max_steps:
            status = MAX_STEPS
            break
        if h < h_min or h < 4.0 * 2.220446049250313e-16 * abs(t):
            status = STEP_FAILURE
            break
        remaining = abs(t_end - t)
        if h >= remaining:
            h = remaining
            last = True
        hs = direction * h
        steps += 1

        k1a, k1b = f0, f1
        k2a, k2b = rhs(kind, t + C2 * hs, y0 + hs * A21 * k1a, y1 + hs * A21 * k1b, p, pt, pu, pdu)
        k3a, k3b = rhs(
            kind, t + C3 * hs,
            y0 + hs * (A31 * k1a + A32 * k2a),
            y1 + hs * (A31 * k1b + A32 * k2b),
            p, pt, pu, pdu,
        )
        k4a, k4b = rhs(
            kind, t + C4 * hs,
            y0 + hs * (A41 * k1a + A42 * k2a + A43 * k3a),
            y1 + hs * (A41 * k1b + A42 * k2b + A43 * k3b),
            p, pt, pu, pdu,
        )
        k5a, k5b = rhs(
            kind, t + C5 * hs,
            y0 + hs * (A51 * k1a + A52 * k2a + A53 * k3a + A54 * k4a),
            y1 + hs * (A51 * k1b + A52 * k2b + A53 * k3b + A54 * k4b),
            p, pt, pu, pdu,
        )
        k6a, k6b = rhs(
            kind, t + hs,
            y0 + hs * (A61 * k1a + A62 * k2a + A63 * k3a + A64 * k4a + A65 * k5a),
            y1 + hs * (A61 * k1b + A62 * k2b + A63 * k3b + A64 * k4b + A65 * k5b),
            p, pt, pu, pdu,
        )
        n0 = y0 + hs * (A71 * k1a + A73 * k3a + A74 * k4a + A75 * k5a + A76 * k6a)
        n1 = y1 + hs * (A71 * k1b + A73 * k3b + A74 * k4b + A75 * k5b + A76 * k6b)
        t_new = t_end if last else t + hs
        k7a, k7b = rhs(kind, t_new, n0, n1, p, pt, pu, pdu)

        e0 = hs * (E1 * k1a + E3 * k3a + E4 * k4a + E5 * k5a + E6 * k6a + E7 * k7a)
        e1 = hs * (E1 * k1b + E3 * k3b + E4 * k4b + E5 * k5b + E6 * k6b + E7 * k7b)
        sc0 = atol + rtol * max(abs(y0), abs(n0))
        sc1 = atol + rtol * max(abs(y1), abs(n1))
        err = math.sqrt(0.5 * ((e0 / sc0) ** 2 + (e1 / sc1) ** 2))

        if not (err == err) or not math.isfinite(n0) or not math.isfinite(n1):
            # non-finite trial step: shrink hard and retry
            h *= 0.1
            last = False
            n_rej += 1
            rejected_prev = True
            continue

        fac11 = err**expo1 if err > 0.0 else 0.0
        if err <= 1.0:
            fac = fac11 / facold**beta
            fac = max(0.1, min(5.0, fac / safe))
            h_new = h / fac if fac > 0.0 else 10.0 * h
            facold = max(err, 1e-4)
            if rejected_prev:
                h_new = min(h_new, h)
            rejected_prev = False

            t = t_new
            y0 = n0
            y1 = n1
            f0 = k7a
            f1 = k7b
            if n == cap:
                cap *= 2
                ts2 = np.empty(cap)
                ya2 = np.empty(cap)
                yb2 = np.empty(cap)
                fa2 = np.empty(cap)
                fb2 = np.empty(cap)
                ts2[:n] = ts[:n]
                ya2[:n] = ya[:n]
                yb2[:n] = yb[:n]
                fa2[:n] = fa[:n]
                fb2[:n] = fb[:n]
                ts, ya, yb, fa, fb = ts2, ya2, yb2, fa2, fb2
            ts[n] = t
            ya[n] = y0
            yb[n] = y1
            fa[n] = f0
            fb[n] = f1
            n += 1

            if stop_on_escape:
                s = math.sin(y0)
                w = 0.5 * y1 * y1 + k_coup * s * s
                if abs(y0) > HALF_PI and w > w_escape:
                    status = ESCAPED_PLUS if y0 > 0.0 else ESCAPED_MINUS
                    break
            if last:
                break
            h = min(h_new, h_max)
        else:
            h = h / min(5.0, fac11 / safe)
            last = False
            n_rej += 1
            rejected_prev = True

    return ts[:n], ya[:n], yb[:n], fa[:n], fb[:n], status, n_rej


# L-stable, stiffly accurate SDIRK of order 4 with embedded order-3 estimate
SD_G = 0.25
SD_C = np.array([0.25, 0.75, 11.0 / 20.0, 0.5, 1.0])
SD_A = np.array(
    [
        [0.25, 0.0, 0.0, 0.0, 0.0],
        [0.5, 0.25, 0.0, 0.0, 0.0],
        [17.0 / 50.0, -1.0 / 25.0, 0.25, 0.0, 0.0],
        [371.0 / 1360.0, -137.0 / 2720.0, 15.0 / 544.0, 0.25, 0.0],
        [25.0 / 24.0, -49.0 / 48.0, 125.0 / 16.0, -85.0 / 12.0, 0.25],
    ]
)
SD_B = np.array([25.0 / 24.0, -49.0 / 48.0, 125.0 / 16.0, -85.0 / 12.0, 0.25])
SD_BHAT = np.array([59.0 / 48.0, -17.0 / 96.0, 225.0 / 32.0, -85.0 / 12.0, 0.0])


@njit(cache=True, nogil=True)
def _prufer_parts(t, theta, lam2, pt, pu, pdu):
    one_m = (1.0 - t) * (1.0 + t)
    f = profile_value(t, pt, pu, pdu)
    pw = t * t
    q = (1.0 - lam2) * pw / (one_m * one_m) - 2.0 * math.cos(2.0 * f) / one_m
    s = math.sin(theta)
    c = math.cos(theta)
    g = c * c / pw + q * s * s
    dg = 2.0 * s * c * (q - 1.0 / pw)
    return g, dg, (1.0 / pw - q) * s * c


@njit(cache=True, nogil=True)
def sdirk_prufer(p, t0, th0, lr0, t_end, rtol, atol, h_init, h_min, max_steps, pt, pu, pdu):
    """Implicit integration of the Pruefer phase equation.

    The phase equation is scalar, so each stage is a scalar Newton solve;
    log R is accumulated as a quadrature over the stage phases.  Output
    matches :func:`dopri5` (nodes, values, slopes, status, rejections).
    """
    lam2 = p[2]
    direction = 1.0 if t_end >= t0 else -1.0
    span = abs(t_end - t0)
    cap = 1024
    ts = np.empty(cap)
    ya = np.empty(cap)
    yb = np.empty(cap)
    fa = np.empty(cap)
    fb = np.empty(cap)
    g0, _, r0 = _prufer_parts(t0, th0, lam2, pt, pu, pdu)
    ts[0] = t0
    ya[0] = th0
    yb[0] = lr0
    fa[0] = g0
    fb[0] = r0
    n = 1
    t = t0
    th = th0
    lr = lr0
    h = h_init if h_init > 0 else min(span, 1e-3 * min(abs(t0), abs(1.0 - abs(t0))) + 1e-300)
    kth = np.empty(5)
    klr = np.empty(5)
    status = REACHED_END
    n_rej = 0
    steps = 0
    while True:
        if steps >= max_steps:
            status = MAX_STEPS
            break
        steps += 1
        last = False
        if h >= abs(t_end - t):
            h = abs(t_end - t)
            last = True
        if h < h_min:
            status = STEP_FAILURE
            break
        hs = direction * h
        ok = True
        for i in range(5):
            ti = t + SD_C[i] * hs
            base = th
            for j in range(i):
                base += hs * SD_A[i, j] * kth[j]
            x = base + hs * SD_G * (kth[i - 1] if i > 0 else g0)
            conv = False
            for _ in range(12):
                g, dg, _r = _prufer_parts(ti, x, lam2, pt, pu, pdu)
                res = x - base - hs * SD_G * g
                dx = -res / (1.0 - hs * SD_G * dg)
                x += dx
                if abs(dx) <= max(1e-3 * (atol + rtol * abs(x)), 8e-16 * abs(x)):
                    conv = True
                    break
            if not conv or not math.isfinite(x):
                ok = False
                break
            g, _dg, r = _prufer_parts(ti, x, lam2, pt, pu, pdu)
            kth[i] = g
            klr[i] = r
        if not ok:
            h *= 0.25
            n_rej += 1
            last = False
            continue
        th_new = th
        lr_new = lr
        e_th = 0.0
        for i in range(5):
            th_new += hs * SD_B[i] * kth[i]
            lr_new += hs * SD_B[i] * klr[i]
            e_th += hs * (SD_B[i] - SD_BHAT[i]) * kth[i]
        # log R is a quadrature over the phase and never feeds back, so
        # only the phase error steers the step
        err = abs(e_th) / (atol + rtol * max(abs(th), abs(th_new)))
        if err <= 1.0:
            t = t_end if last else t + hs
            th = th_new
            lr = lr_new
            g0 = kth[4]
            if n == cap:
                cap *= 2
                ts2 = np.empty(cap)
                ya2 = np.empty(cap)
                yb2 = np.empty(cap)
                fa2 = np.empty(cap)
                fb2 = np.empty(cap)
                ts2[:n] = ts[:n]
                ya2[:n] = ya[:n]
                yb2[:n] = yb[:n]
                fa2[:n] = fa[:n]
                fb2[:n] = fb[:n]
                ts, ya, yb, fa, fb = ts2, ya2, yb2, fa2, fb2
            ts[n] = t
            ya[n] = th
            yb[n] = lr
            fa[n] = kth[4]
            fb[n] = klr[4]
            n += 1
            if last:
                break
            fac = 0.9 * err ** (-0.25) if err > 0 else 4.0
            h *= min(4.0, max(0.2, fac))
        else:
            h *= max(0.2, 0.9 * err ** (-0.25))
            n_rej += 1
    return ts[:n], ya[:n], yb[:n], fa[:n], fb[:n], status, n_rej
