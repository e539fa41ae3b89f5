import copy

import numpy as np
import pytest

from scacopf.api.case_source import case_from_dict, load_case
from scacopf.core.evaluation import flat_start

THREE_BUS = {
    "name": "three-bus",
    "s_base": 100.0,
    "buses": [
        {"id": "b1", "v_lo": 0.9, "v_hi": 1.1},
        {"id": "b2", "v_lo": 0.9, "v_hi": 1.1},
        {"id": "b3", "v_lo": 0.9, "v_hi": 1.1, "load_p": 150.0, "load_q": 0.0},
    ],
    "generators": [
        {"id": "G1", "bus": "b1", "p_lo": 0.0, "p_hi": 100.0, "q_lo": -100.0, "q_hi": 100.0,
         "alpha": 1.0, "cost": {"lengths": [50.0, 50.0], "slopes": [10.0, 20.0]}},
        {"id": "G2", "bus": "b2", "p_lo": 0.0, "p_hi": 200.0, "q_lo": -100.0, "q_hi": 100.0,
         "alpha": 1.0, "cost": {"lengths": [200.0], "slopes": [30.0]}},
    ],
    "lines": [
        {"id": "L12", "from": "b1", "to": "b2", "r": 0.0, "x": 0.1, "rate_base": 500.0},
        {"id": "L13", "from": "b1", "to": "b3", "r": 0.0, "x": 0.1, "rate_base": 500.0},
        {"id": "L23", "from": "b2", "to": "b3", "r": 0.0, "x": 0.1, "rate_base": 500.0},
    ],
    "contingencies": [
        {"id": "c_L12", "kind": "line", "element": "L12"},
    ],
}


@pytest.fixture(scope="session")
def case5():
    """Cas 5 bus embarqué (3 contingences : G2, L2, L5)."""
    return load_case("bundled:case5")


@pytest.fixture
def three_bus_data():
    return copy.deepcopy(THREE_BUS)


@pytest.fixture
def three_bus(three_bus_data):
    """Réseau 3 bus sans pertes : optimum économique G1 = 100 MW, G2 = 50 MW, coût 3000 $."""
    return case_from_dict(three_bus_data)


@pytest.fixture
def flat_base(case5):
    return flat_start(case5, 0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def solved_base(case5):
    """Solution ACOPF du cas de base de case5 (sans contingences)."""
    from scacopf.core.admm import AdmmConfig, BaseStateBlock

    return BaseStateBlock(case5, AdmmConfig()).state()
