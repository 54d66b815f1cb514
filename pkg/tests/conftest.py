import numpy as np
import pytest

from fracstrip.fbm import TimeGrid


@pytest.fixture
def unit_grid():
    return TimeGrid(1.0, 64)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def within_se(est, target, se, k=3.0):
    return abs(est - target) <= k * se


_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """Record one result line per acceptance criterion; printed in the terminal summary."""

    def record(label: str, passed: bool, detail: str):
        line = f"{label}: {'PASS' if passed else 'FAIL'} | {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
