import numpy as np
import pytest
from hypothesis import strategies as st

from qmonitor.operators import EffectOperator, EffectSet


def random_density(rng, d, rank=None):
    rank = rank or d
    g = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_unbiased_set(rng, d, k):
    """Kraus operators from the blocks of a random isometry, so sum A^dag A = 1."""
    g = rng.normal(size=(k * d, d)) + 1j * rng.normal(size=(k * d, d))
    q, _ = np.linalg.qr(g)
    return EffectSet(tuple(EffectOperator(i, 0, q[i * d:(i + 1) * d]) for i in range(k)))


seeds = st.integers(min_value=0, max_value=2**32 - 1)
dims = st.integers(min_value=1, max_value=5)
counts = st.integers(min_value=1, max_value=4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import LINES
    except ImportError:
        return
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
