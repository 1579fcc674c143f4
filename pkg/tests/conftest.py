import numpy as np
import pytest

from srclock import SystemParams, desk_params


@pytest.fixture(scope="session")
def lab_params():
    """Full-scale laboratory parameter set."""
    return SystemParams()


@pytest.fixture(scope="session")
def desk2():
    return desk_params(n_atoms=2)


def random_state_array(rng, scale=1.0):
    """Random moment vector with real-tagged entries real."""
    from srclock.cumulant import NMOMENTS, REAL_MOMENTS
    vec = (rng.standard_normal(NMOMENTS) + 1j * rng.standard_normal(NMOMENTS)) * scale
    for k in REAL_MOMENTS:
        vec[k] = vec[k].real
    return vec
