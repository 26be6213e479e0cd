import sys

import pytest

from cfcond.weights import Explicit, Geometric, PowerLaw


@pytest.fixture
def power_law():
    return PowerLaw(3.5, 2.0)


@pytest.fixture
def geometric():
    return Geometric(0.5)


@pytest.fixture
def explicit_pair():
    return Explicit((1.0, 1.0))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(mod.ACCEPTANCE):
        terminalreporter.write_line(line)
