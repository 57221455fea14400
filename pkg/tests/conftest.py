import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lassoldp import Problem

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def canonical():
    """d=1, A=[1], y=[0], mu=1."""
    return Problem([[1.0]], [0.0], 1.0)


@pytest.fixture
def y2():
    return Problem([[1.0]], [2.0], 1.0)


@pytest.fixture
def sticky():
    return Problem([[1.0]], [0.5], 1.0)


def random_problem(rng, n, d, mu=None, cond_max=None):
    """Random instance; with ``cond_max`` the matrix is resampled until cond(A) <= cond_max."""
    while True:
        A = rng.standard_normal((n, d))
        if cond_max is None or np.linalg.cond(A) <= cond_max:
            break
    y = rng.standard_normal(n)
    if mu is None:
        mu = rng.uniform(0.1, 1.0) * max(np.abs(A.T @ y).max(), 0.1)
    return Problem(A, y, mu)


_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Recorder for acceptance verdicts: ``acceptance(n, ok, detail)``."""
    def record(n, ok, detail):
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[n] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
