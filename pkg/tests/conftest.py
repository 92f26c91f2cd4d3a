import warnings

import numpy as np
import pytest

from rbmlab.lattice import TorusLattice
from rbmlab.profile import build_profile, get_shape


@pytest.fixture(autouse=True)
def _quiet_band_wrap():
    # several tests deliberately use L <= 2W (mean-field comparisons)
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="L=.* band wraps")
        yield


@pytest.fixture
def small_profile():
    return build_profile(get_shape("gaussian"), 2.0, TorusLattice(1, 8))


@pytest.fixture
def medium_profile():
    return build_profile(get_shape("gaussian"), 4.0, TorusLattice(1, 32))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
