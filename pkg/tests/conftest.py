import sys

import numpy as np
import pytest

from ipwpower.propensity import propensity_law


@pytest.fixture(scope="session")
def cohort_law():
    """Propensity law for r = 0.381, phi = 0.835."""
    return propensity_law(0.381, 0.835)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
