import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from movsep.geometry import ArrayGeometry, DirectionGrid, default_geometry, doa_kernels
from movsep.spectral import AudioBuffer

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# criterion number -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE = {}


def record(number: int, passed: bool, detail: str = ""):
    prev = ACCEPTANCE.get(number)
    if prev is not None:
        passed = passed and prev[0]
        detail = "; ".join(d for d in (prev[1], detail) if d)
    ACCEPTANCE[number] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def geom() -> ArrayGeometry:
    return default_geometry()


@pytest.fixture(scope="session")
def grid() -> DirectionGrid:
    return DirectionGrid(72)


@pytest.fixture(scope="session")
def small_kernels(geom, grid):
    """Kernels for a 64-point DFT, enough for fast structural checks."""
    return doa_kernels(geom, grid, 33, 64, 24000.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
