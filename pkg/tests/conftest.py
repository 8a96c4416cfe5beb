import math

import numpy as np
import pytest

from kgdiag.discretization import build_grid
from kgdiag.geometry import assemble_model, make_scenario
from kgdiag.timegrid import TimeGrid

TWO_PI = 2 * math.pi


def small_model(name="static", n=16, horizon=10.0, dt=0.05, **params):
    grid = build_grid(n, TWO_PI)
    scenario = make_scenario(name, length=TWO_PI, **params)
    return assemble_model(scenario, grid, TimeGrid.symmetric(horizon, dt))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def grid16():
    return build_grid(16, TWO_PI)


@pytest.fixture(scope="session")
def static_model():
    return small_model("static", n=16, horizon=10.0)


@pytest.fixture(scope="session")
def sech_model():
    return small_model("sech", n=16, horizon=10.0)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and getattr(mod, "LINES", None):
        terminalreporter.section("acceptance criteria")
        for line in mod.LINES:
            terminalreporter.write_line(line)
