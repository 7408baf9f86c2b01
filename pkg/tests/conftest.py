import numpy as np
import pytest
from hypothesis import strategies as st

FIG1 = np.array([1.0, 1.0, 1.0, 3.0, 2.0, 1.0])
DECAY = np.array([1.0, 1.0, 1.0, 1.0, 4.0, 1.0])


def positive_states(n_values=(6, 8, 10), lo=0.2, hi=5.0):
    """Hypothesis strategy: strictly positive lattice states of even size."""
    return st.sampled_from(n_values).flatmap(
        lambda n: st.lists(st.floats(lo, hi, allow_nan=False), min_size=n, max_size=n)
    ).map(np.array)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_state(rng, n=6, lo=0.5, hi=3.0):
    return rng.uniform(lo, hi, size=n)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[num])
