import numpy as np
import pytest

from mfswitch.measure import DiscreteLaw
from mfswitch.trading import TradingExampleSpec


def two_atom_law(v1, v0):
    """Law with identity moments v1 on mode 1 and v0 on mode 0."""
    atoms = [(v, i) for v, i in ((v1, 1), (v0, 0)) if v > 0]
    w = 1.0 / len(atoms)
    return DiscreteLaw(np.array([[v / w] for v, _ in atoms]), np.array([i for _, i in atoms]), np.full(len(atoms), w))


@pytest.fixture
def law_from_moments():
    return two_atom_law


@pytest.fixture
def two_state():
    return TradingExampleSpec.two_state(1.0, [2.0, 4.0], [2.0, 1.5])


@pytest.fixture
def four_state():
    return TradingExampleSpec.four_state(1.0, [1.0, 1.5, 2.5, 3.0], [3.0, 2.5, 1.5, 1.0], 1.0, 3.0, 0.5, 0.25, 0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
