import numpy as np
import pytest

from adicflow.graph_core import Q_A, OrientedGraph
from adicflow.limit_harness import PeriodicModel
from adicflow.spectral import decompose

Q_B = np.array([[6, 2, 1], [2, 5, 2], [1, 2, 4]])
Q_C = np.array([[2, 1], [1, 2]])
Q_GOLD = np.array([[2, 1], [1, 1]])


@pytest.fixture(scope="session")
def gA():
    return OrientedGraph.from_matrix(Q_A)


@pytest.fixture(scope="session")
def sdA():
    return decompose(Q_A)


@pytest.fixture(scope="session")
def gB():
    return OrientedGraph.from_matrix(Q_B)


@pytest.fixture(scope="session")
def sdB():
    return decompose(Q_B)


@pytest.fixture(scope="session")
def modelA(gA, sdA):
    return PeriodicModel(gA, sdA)


@pytest.fixture(scope="session")
def modelB(gB, sdB):
    return PeriodicModel(gB, sdB)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
