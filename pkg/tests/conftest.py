import sys

import numpy as np
import pytest

from vortexfil.core import ModelParams, SpatialGrid
from vortexfil.profile import solve_profile


@pytest.fixture(scope="session")
def pair_profile():
    return solve_profile(ModelParams(alpha=20.0), "pair")


@pytest.fixture(scope="session")
def polygon_profile():
    return solve_profile(ModelParams(alpha=20.0, omega=1.0), "polygonal")


@pytest.fixture(scope="session")
def polygon0_profile():
    return solve_profile(ModelParams(alpha=20.0, omega=0.0), "polygonal")


@pytest.fixture(scope="session")
def box():
    return SpatialGrid(80.0, 4096)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
