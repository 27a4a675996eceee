import os

import pytest
from hypothesis import HealthCheck, settings

from selfsim.ode import EquationParams
from selfsim.shooting import solve_orbits

settings.register_profile(
    "default",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.register_profile("ci", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def m3():
    return EquationParams(3, 1)


@pytest.fixture(scope="session")
def orbits_m3(m3):
    return solve_orbits(m3, 4)


@pytest.fixture(scope="session")
def orbits_m5():
    return solve_orbits(EquationParams(5, 1), 1)


@pytest.fixture(scope="session")
def spectra_m3(orbits_m3):
    from selfsim.stability import find_spectrum

    cache = {}

    def get(n):
        if n not in cache:
            cache[n] = find_spectrum(orbits_m3[n])
        return cache[n]

    return get
