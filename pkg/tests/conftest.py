import numpy as np
import pytest

from poldec.input_tree import InputTree

# filled by tests/test_acceptance.py, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []

FIG3 = "[(u1|x4), (u2,u3|x2,x3)->[(u4|x1)]]"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def fig3_tree():
    """Four inputs, four states: u1 and u4 are leaves, u4 sits below the (u2, u3) node."""
    return InputTree.parse(FIG3, 4, 4)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
