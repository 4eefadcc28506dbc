import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("ubot", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ubot")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def gen():
    return np.random.default_rng(20240611)


def fd5(fun, x0, delta):
    """Five-point central difference of a scalar function at ``x0``."""
    return (-fun(x0 + 2 * delta) + 8 * fun(x0 + delta) - 8 * fun(x0 - delta) + fun(x0 - 2 * delta)) / (12 * delta)


def golden_section(fun, lo, hi, tol=1e-13):
    """Minimize a unimodal scalar function on ``[lo, hi]``."""
    ratio = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - ratio * (b - a), a + ratio * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol * max(1.0, abs(a) + abs(b)):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - ratio * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + ratio * (b - a)
            fd = fun(d)
    x = (a + b) / 2
    return x, fun(x)
