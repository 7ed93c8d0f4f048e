import pytest

from branchlab.field import GridSpec
from branchlab.offspring import make_offspring


@pytest.fixture(scope="session")
def binary():
    return make_offspring({1: 0.5, 2: 0.5})


@pytest.fixture(scope="session")
def grid():
    return GridSpec(1, 20.0, 512)


@pytest.fixture(scope="session")
def long_grid():
    return GridSpec(1, 40.0, 512)
