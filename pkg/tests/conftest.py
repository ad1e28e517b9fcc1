import sys

import numpy as np
import pytest
from hypothesis import strategies as st

from vidm.core_prob import make_rng


def simplex(n_min=2, n_max=6, min_mass=0.0):
    """Hypothesis strategy for probability vectors."""

    @st.composite
    def _draw(draw):
        n = draw(st.integers(n_min, n_max))
        w = draw(st.lists(st.floats(min_mass + 1e-3, 1.0), min_size=n, max_size=n))
        w = np.array(w)
        return w / w.sum()

    return _draw()


@pytest.fixture
def rng():
    return make_rng(12345, "tests")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
