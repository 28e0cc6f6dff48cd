import numpy as np
import pytest

from ftilm.lattice import LogProbLattice


def random_lattice(rng, T, U, low=0.05, high=0.95):
    """Lattice with entries log-uniform in (low, high); never within ``eps`` of zero."""
    blank = np.log(rng.uniform(low, high, size=(T, U + 1)))
    label = np.log(rng.uniform(low, high, size=(T, U)))
    return LogProbLattice(blank, label)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
