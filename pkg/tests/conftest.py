import numpy as np
import pytest

from pwcip import forward, geodesics
from pwcip.fdgrid import GridSpec
from pwcip.medium import bump_medium, constant_medium, layered_medium, windowed_medium

# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def grid():
    return GridSpec()


@pytest.fixture(scope="session")
def small_grid():
    return GridSpec(z_samples=11, t_samples=13)


MEDIA = {
    "constant": constant_medium,
    "layered": layered_medium,
    "windowed": windowed_medium,
    "bump": bump_medium,
}


def optics_pipeline(medium, grid, r_trunc=1):
    tf = geodesics.travel_time_field(medium, grid)
    af = geodesics.amplitude_field(medium, grid, tf)
    al = geodesics.higher_amplitudes(medium, grid, af, tf, r_trunc)
    T = grid.T1 + medium.n0
    wave = forward.optics_forward(medium, grid, tf, af, al, T)
    td = forward.transform_chain(forward.extract_cip_data(wave, grid), tf, T, wave=wave, n0=medium.n0)
    return tf, af, al, wave, td


@pytest.fixture(scope="session")
def layered_optics(grid):
    return optics_pipeline(layered_medium(), grid)


@pytest.fixture(scope="session")
def constant_optics(grid):
    return optics_pipeline(constant_medium(), grid)


def smoothstep(z):
    z = np.clip(z, 0.0, 1.0)
    return z**3 * (10 - 15 * z + 6 * z**2)
