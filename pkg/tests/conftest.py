from __future__ import annotations

import numpy as np
import pytest

from dynamic_iv.simulation import population_oracle, population_panel, preset, sample_dataset


@pytest.fixture(scope="session")
def refA():
    return preset("refA")


@pytest.fixture(scope="session")
def refA_oracle(refA):
    return population_oracle(refA)


@pytest.fixture(scope="session")
def refA_population(refA):
    return population_panel(refA)


@pytest.fixture(scope="session")
def refA_sample(refA):
    return sample_dataset(refA, 4000, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
