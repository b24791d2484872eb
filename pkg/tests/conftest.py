import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ballmax import integrand, radial

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile(
    "thorough", deadline=None, max_examples=2000, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = {}


def record_criterion(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])


def make_setup(n, family="exponential", a=1.0, p=2.0, n_r=512, n_dir=None, params=None):
    R = radial.ball_radius(n, a, p).R
    params = dict(params or {})
    if family == "linear-cutoff":
        params.setdefault("c", 4 * R)
    F = integrand.Integrand(family, params, a=a, p=p, n=n)
    grid = radial.build_grid(n, 4 * R, n_r, n_dir)
    profile = radial.ball_radius(n, a, p, F, grid.R_max)
    return F, grid, profile


@pytest.fixture(scope="session")
def setup_1d():
    return make_setup(1)


@pytest.fixture(scope="session")
def setup_2d():
    return make_setup(2)


@pytest.fixture(scope="session")
def setup_3d():
    return make_setup(3)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20261017)
