import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from softloco import scenario as SC


@pytest.fixture(scope="session")
def single_tet_scenario():
    return SC.builtin_scenario("single-tet-on-plane")


@pytest.fixture(scope="session")
def single_tet_m6_scenario():
    config = SC._single_tet_config(segments=6)
    return SC.load_scenario(config, name="single-tet-m6")


@pytest.fixture(scope="session")
def bar_hop_scenario():
    return SC.builtin_scenario("bar-hop")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
