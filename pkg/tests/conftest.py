from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from bearingsim.formation import spec_from_target_config
from bearingsim.graph import build_acyclic_lf_graph

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"


@pytest.fixture
def minimal_graph():
    return build_acyclic_lf_graph(3, [[1, 2, 3]])


@pytest.fixture
def minimal_spec(minimal_graph):
    return spec_from_target_config(minimal_graph, np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [1.0, 1.0]]))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def minimal_raw(**controller) -> dict:
    ctrl = {"law": "bearing_only", "alpha": 0.5, "beta": 1.0}
    ctrl.update(controller)
    return {
        "name": "minimal",
        "dimension": 2,
        "graph": {"leaders": 3, "followers": [[1, 2, 3]]},
        "bearings": {"target_configuration": [[0, 0], [2, 0], [0, 2], [1, 1]]},
        "initial": {"positions": [[0, 0], [2, 0], [0, 2], [1.3, 1.3]]},
        "controller": ctrl,
        "leaders": {"segments": [{"start": 0, "end": 2, "velocity": ["0", "0"]}]},
        "integrator": {"step": 0.001, "end_time": 1},
    }


@pytest.fixture(scope="session")
def sim1():
    from bearingsim.engine import run
    from bearingsim.scenario import load_scenario

    sc = load_scenario(SCENARIOS / "sim1.json")
    return sc, run(sc)


@pytest.fixture(scope="session")
def sim2():
    from bearingsim.engine import run
    from bearingsim.scenario import load_scenario

    sc = load_scenario(SCENARIOS / "sim2.json")
    return sc, run(sc)
