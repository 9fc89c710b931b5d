import numpy as np
import pytest

from sparseflex.shapes import sign_change_grid, sphere_sdf


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def shell32():
    """Sign-change voxels of the r=0.6 sphere at N_r=32."""
    return sign_change_grid(sphere_sdf(0.6), 32)


ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance():
    """Record ``(passed, detail)`` per criterion; printed in the terminal summary."""
    return ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
