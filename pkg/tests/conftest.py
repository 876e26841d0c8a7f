import numpy as np
import pytest

from randflux import FluxSpec, ProcessSpec


@pytest.fixture(scope="session")
def abs_flux():
    return FluxSpec.absolute_value()


@pytest.fixture(scope="session")
def three_slope_flux():
    # asymmetric placement keeps segment/vertex probabilities distinct
    return FluxSpec.polygonal((-1.0, 0.0, 1.0), (-0.5, 0.5))


@pytest.fixture(scope="session")
def bm():
    return ProcessSpec.brownian_motion()


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
