import sys

import numpy as np
import pytest

from robustgp import GridModel
from robustgp.cases import case_small


@pytest.fixture
def small_model():
    """Four generators on a meshed network."""
    L = np.array([[3.0, -1.0, -2.0, 0.0],
                  [-1.0, 2.5, -0.5, -1.0],
                  [-2.0, -0.5, 4.0, -1.5],
                  [0.0, -1.0, -1.5, 2.5]])
    return GridModel(inertia=[2.0, 3.0, 1.5, 4.0], gamma=1.0, laplacian=L)


@pytest.fixture(scope="session")
def desk_case():
    return case_small(0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
