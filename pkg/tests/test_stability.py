import math

import mpmath as mp
import numpy as np
import pytest

from selfsim.ode import DomainError, PhaseState
from selfsim.stability import (
    CountMismatch,
    EigenShotConfig,
    eigen_mismatch,
    eigen_rhs,
    eigenfunction,
    find_spectrum,
    gauge_mode,
    gauge_residual,
    hessian_form,
    phase_mismatch,
    weighted_norm2,
)

# --- equation --------------------------------------------------------------------


def test_eigen_rhs_closed_form(orbits_m3):
    r = mp.mpf("0.5")
    cos2f = (1 - 6 * r**2 + r**4) / (1 + r**2) ** 2
    expected = 2 * cos2f / (r**2 * (1 - r**2))
    d = eigen_rhs(orbits_m3[0], 1.0, 0.5, PhaseState(1.0, 0.0))
    assert d[0] == 0.0
    assert abs(d[1] - float(expected)) < 1e-9 * abs(float(expected))


def test_eigen_rhs_zero_state(orbits_m3):
    assert tuple(eigen_rhs(orbits_m3[1], 30.0, 0.3, PhaseState(0.0, 0.0))) == (0.0, 0.0)


@pytest.mark.parametrize("rho", [0.0, 1.0, 1.2])
def test_eigen_rhs_domain(orbits_m3, rho):
    with pytest.raises(DomainError):
        eigen_rhs(orbits_m3[0], 1.0, rho, PhaseState(1.0, 0.0))


def test_gauge_mode_satisfies_equation_pointwise(orbits_m3):
    # chain rule on the closed-form ground state
    rho = 0.37
    s = 1 - rho * rho
    v = 2 * rho * math.sqrt(s) / (1 + rho * rho)
    h = 1e-5
    vp = lambda r: 2 * r * math.sqrt(1 - r * r) / (1 + r * r)  # noqa: E731
    dv = (vp(rho + h) - vp(rho - h)) / (2 * h)
    ddv = (vp(rho + h) - 2 * vp(rho) + vp(rho - h)) / h**2
    d = eigen_rhs(orbits_m3[0], 0.0, rho, PhaseState(v, dv))
    assert d[1] == pytest.approx(ddv, rel=1e-5)


# --- mismatch ----------------------------------------------------------------------


def test_mismatch_root_n1(orbits_m3, spectra_m3):
    lam2 = spectra_m3(1).eigenvalues[0]
    assert lam2 == pytest.approx(28.448, rel=1e-3)
    mm = eigen_mismatch(orbits_m3[1], lam2)
    assert abs(mm.phase) < 1e-8
    assert not mm.node_collision
    off = eigen_mismatch(orbits_m3[1], 1.1 * lam2)
    assert abs(off.phase) > 1e3 * abs(mm.phase)


def test_mismatch_root_n2(orbits_m3, spectra_m3):
    lam2 = spectra_m3(2).eigenvalues[1]
    assert lam2 == pytest.approx(3372.12, rel=5e-3)
    # rho = 0.5 is classically forbidden at this lambda^2, so match where the mode lives
    cfg = EigenShotConfig(match_point=eigenfunction(orbits_m3[2], lam2).match)
    assert cfg.match_point < 0.05
    assert abs(eigen_mismatch(orbits_m3[2], lam2, cfg).phase) < 1e-10
    below = eigen_mismatch(orbits_m3[2], lam2 * (1 - 1e-6), cfg).phase
    above = eigen_mismatch(orbits_m3[2], lam2 * (1 + 1e-6), cfg).phase
    assert below > 0 > above


def test_mismatch_root_log_derivative(orbits_m3, spectra_m3):
    lam2 = spectra_m3(1).eigenvalues[0]
    mm = eigen_mismatch(orbits_m3[1], lam2)
    scale = abs(eigen_mismatch(orbits_m3[1], 2 * lam2).log_derivative)
    assert abs(mm.log_derivative) < 1e-6 * scale


def test_ground_state_has_no_level_crossing(orbits_m3):
    grid = np.geomspace(1e-6, 1e5, 60)
    phase = np.array([phase_mismatch(orbits_m3[0], g) for g in grid])
    f0 = phase_mismatch(orbits_m3[0], 1e-12)
    # the phase never reaches the next level below j0*pi
    assert np.all(phase > f0 - math.pi)


def test_mismatch_requires_positive_lambda2(orbits_m3):
    with pytest.raises(DomainError):
        eigen_mismatch(orbits_m3[1], 0.0)


# --- spectra -------------------------------------------------------------------


def test_spectrum_f0_empty(spectra_m3):
    assert spectra_m3(0).eigenvalues == []


def test_spectrum_f1(spectra_m3):
    (lam2,) = spectra_m3(1).eigenvalues
    assert lam2 == pytest.approx(28.448, rel=1e-3)


def test_spectrum_f2(spectra_m3):
    lam = spectra_m3(2).eigenvalues
    assert len(lam) == 2
    assert lam[0] == pytest.approx(28.132, rel=5e-3)
    assert lam[1] == pytest.approx(3372.12, rel=5e-3)


@pytest.mark.parametrize("n", range(5))
def test_sturm_count(spectra_m3, n):
    sp = spectra_m3(n)
    assert len(sp.eigenvalues) == n
    assert sp.gauge_zero_count == n
    assert all(a < b for a, b in zip(sp.eigenvalues, sp.eigenvalues[1:]))
    assert all(v > 0 for v in sp.eigenvalues)


@pytest.mark.parametrize("n", range(5))
def test_gauge_residual(orbits_m3, spectra_m3, n):
    assert spectra_m3(n).gauge_residual <= 1e-6
    assert gauge_residual(orbits_m3[n]) <= 1e-6


def test_match_point_independence(orbits_m3, spectra_m3):
    base = spectra_m3(2).eigenvalues
    for mp_ in (0.4, 0.6):
        cfg = EigenShotConfig(match_point=mp_)
        lam = find_spectrum(orbits_m3[2], cfg).eigenvalues
        for a, b in zip(lam, base):
            assert abs(a - b) <= 10 * cfg.secant_tol * b


def test_count_mismatch_raised(orbits_m3):
    # a scan ceiling below the second level cannot find both n=2 eigenvalues
    cfg = EigenShotConfig(lambda2_max=100.0, lambda2_ceiling=100.0)
    with pytest.raises(CountMismatch) as info:
        find_spectrum(orbits_m3[2], cfg)
    assert info.value.expected == 2
    assert len(info.value.eigenvalues) == 1
    res = find_spectrum(orbits_m3[2], cfg, check_count=False)
    assert len(res.eigenvalues) == 1


def test_m5_rejected(orbits_m5):
    with pytest.raises(DomainError):
        find_spectrum(orbits_m5[0])


@pytest.mark.parametrize("kw", [dict(match_point=0.0), dict(match_point=1.0), dict(lambda2_min=0.0), dict(grid_count=1)])
def test_eigen_config_rejected(kw):
    with pytest.raises(ValueError):
        EigenShotConfig(**kw)


# --- gauge mode -----------------------------------------------------------------


def test_gauge_mode_ground_state(orbits_m3):
    rho = np.linspace(0.01, 0.99, 99)
    g = gauge_mode(orbits_m3[0], rho)
    exact = 2 * rho * np.sqrt(1 - rho**2) / (1 + rho**2)
    assert np.max(np.abs(g.v - exact)) < 1e-9
    assert g.zero_count == 0


@pytest.mark.parametrize("n", range(5))
def test_gauge_mode_sampled_zeros(orbits_m3, n):
    rho = np.linspace(1e-4, 1 - 1e-4, 200001)
    v = gauge_mode(orbits_m3[n], rho).v
    assert int(np.sum(np.sign(v[:-1]) * np.sign(v[1:]) < 0)) == n


def test_gauge_mode_sqrt_decay(orbits_m3):
    y = np.array([1e-4, 1e-6])
    v = gauge_mode(orbits_m3[1], 1 - y).v
    ratio = v / np.sqrt(y)
    assert ratio[0] == pytest.approx(ratio[1], rel=1e-3)


# --- eigenfunctions and second variation ----------------------------------------


@pytest.mark.parametrize("n,k", [(1, 0), (2, 0), (2, 1)])
def test_eigenfunction_endpoint_exponent(orbits_m3, spectra_m3, n, k):
    lam2 = spectra_m3(n).eigenvalues[k]
    ef = eigenfunction(orbits_m3[n], lam2)
    gamma = 0.5 * (1 + math.sqrt(lam2))
    assert ef.local_exponent(1e-5) == pytest.approx(gamma, rel=1e-2)


@pytest.mark.parametrize("n,k", [(1, 0), (2, 0), (2, 1)])
def test_eigenfunction_nodes(orbits_m3, spectra_m3, n, k):
    # the k-th unstable mode (ordered by lambda^2) has n-1-k interior nodes
    lam2 = spectra_m3(n).eigenvalues[k]
    ef = eigenfunction(orbits_m3[n], lam2)
    rho = np.linspace(1e-3, 1 - 1e-3, 20001)
    v, _ = ef(rho)
    assert np.max(np.abs(v)) == pytest.approx(1.0, rel=1e-3)
    assert int(np.sum(np.sign(v[:-1]) * np.sign(v[1:]) < 0)) == n - 1 - k


@pytest.mark.parametrize("n", [1, 2])
def test_hessian_negative_on_unstable_mode(orbits_m3, spectra_m3, n):
    lam2 = spectra_m3(n).eigenvalues[0]
    ef = eigenfunction(orbits_m3[n], lam2)
    d2 = hessian_form(orbits_m3[n], ef)
    assert d2 < 0
    # A v = (1 - lambda^2) v integrates to this identity
    assert d2 == pytest.approx(0.5 * (1 - lam2) * weighted_norm2(ef), rel=1e-4)


def _bump(center, width):
    def v(r):
        z = (r - center) / width
        inside = np.abs(z) < 1
        out = np.zeros_like(r)
        dout = np.zeros_like(r)
        zi = z[inside]
        e = np.exp(-1 / (1 - zi * zi))
        out[inside] = e
        dout[inside] = e * (-2 * zi / (1 - zi * zi) ** 2) / width
        return out, dout

    return v


@pytest.mark.parametrize("center,width", [(0.5, 0.3), (0.3, 0.2), (0.8, 0.15), (0.5, 0.49)])
def test_ground_state_hessian_nonnegative(orbits_m3, center, width):
    assert hessian_form(orbits_m3[0], _bump(center, width)) >= 0


def test_hessian_zero_perturbation(orbits_m3):
    zero = lambda r: (np.zeros_like(r), np.zeros_like(r))  # noqa: E731
    assert hessian_form(orbits_m3[0], zero) == 0.0
    assert hessian_form(orbits_m3[1], zero) == 0.0


def test_hessian_sampled_input(orbits_m3):
    bump = _bump(0.5, 0.3)
    rho = np.linspace(0.0, 1.0, 4001)
    d_call = hessian_form(orbits_m3[0], bump)
    d_samp = hessian_form(orbits_m3[0], (rho, bump(rho)[0]))
    assert d_samp == pytest.approx(d_call, rel=1e-4)
