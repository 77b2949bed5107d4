import numpy as np
import pytest

from ieti_dg.assembly import discretize
from ieti_dg.driver import source
from ieti_dg.geometry import quarter_annulus_multipatch, unit_square_multipatch


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def f():
    return source


@pytest.fixture(scope="session")
def square22_r1():
    return discretize(unit_square_multipatch(2, 2), 2, 1)


@pytest.fixture(scope="session")
def annulus22_mixed():
    """2x2 annulus with non-matching degrees and levels on every interface."""
    return discretize(quarter_annulus_multipatch(2, 2), [2, 3, 3, 2], [2, 1, 1, 3])


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
