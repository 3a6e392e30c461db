import numpy as np
import pytest
from hypothesis import settings

from nplab.trajectory_core import dyadic_grid, make_trajectory

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def step_path(level: int = 1, at: float = 0.5, low: float = 100.0, high: float = 110.0):
    """Flat at ``low`` with one jump to ``high`` at time ``at``."""
    t = dyadic_grid(level)
    k = int(round(at * 2**level))
    v = np.where(np.arange(t.size) >= k, high, low)
    return make_trajectory(t, v, [(k, low)])


@pytest.fixture
def single_jump():
    return step_path()


@pytest.fixture
def two_jumps():
    # +10 at 0.25, -5 at 0.75
    t = dyadic_grid(2)
    return make_trajectory(t, [100, 110, 110, 105, 105], [(1, 100), (3, 110)])


# One summary line per acceptance criterion, printed after the run.
AC_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if AC_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(AC_LINES, key=lambda s: int(s.split()[0][2:])):
            terminalreporter.write_line(line)
