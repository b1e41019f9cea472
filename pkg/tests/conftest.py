import numpy as np
import pytest

from p1lab.envelope import parse_weight
from p1lab.geometry import build_grid


@pytest.fixture(scope="session")
def grid128():
    return build_grid(128, 168)


@pytest.fixture(scope="session")
def grid64():
    return build_grid(64, 64)


@pytest.fixture(scope="session")
def fs_weight():
    return parse_weight("fs")


@pytest.fixture(scope="session")
def cap_weight():
    return parse_weight("cap{1}")


@pytest.fixture
def rng():
    return np.random.default_rng(20260814)
