import pytest

from nobacktrack.data import make_rng
from nobacktrack.oracles import small_problem


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture
def problem():
    """5-unit RNN over a 3-symbol alphabet with a 10-step sequence."""
    return small_problem(seed=7, n_units=5)


@pytest.fixture
def tiny_problem():
    return small_problem(seed=3, n_units=2, n_symbols=2, steps=3)
