import numpy as np
import pytest

from dogmap.grid import GridSpec


@pytest.fixture
def spec() -> GridSpec:
    return GridSpec()


@pytest.fixture
def small_spec() -> GridSpec:
    return GridSpec(cells_per_side=16, side_length=16.0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
