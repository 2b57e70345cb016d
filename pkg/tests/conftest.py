import copy

import pytest

from app.config import RULES_PATH, scenario_path
from app.core.modulator import ScriptedModulator, load_rule_table
from app.core.world import World, load_scenario_with_grid, parse_scenario
from app.models.metrics_models import MetricsConfig

OPEN_ROOM = {
    "id": "open_room",
    "instruction": "Navigate to the reception desk.",
    "seed": 1,
    "map": {"resolution": 0.1, "width": 100, "height": 100, "border": True},
    "regions": [
        {
            "id": "reception_desk",
            "kind": "goal",
            "polygon": [[7.0, 4.0], [9.0, 4.0], [9.0, 6.0], [7.0, 6.0]],
        },
        {
            "id": "yellow_line_1",
            "label": "yellow_line",
            "kind": "forbidden",
            "severity_weight": 50,
            "polygon": [[4.0, 1.0], [5.0, 1.0], [5.0, 2.0], [4.0, 2.0]],
        },
    ],
    "pedestrians": [
        {"id": "doctor_1", "identity": "doctor", "trajectory": [[0.0, 3.0, 5.0], [10.0, 8.0, 5.0]]},
        {"id": "patient_1", "identity": "patient", "vulnerable": True, "trajectory": [[0.0, 5.0, 8.0]]},
    ],
    "robot": {"start": {"x": 1.5, "y": 5.0, "theta": 0.0}},
    "task": {
        "archetype": "reach",
        "goal": {"region_id": "reception_desk"},
        "time_limit": 30,
        "forbidden_regions": ["yellow_line_1"],
        "subjects": [{"pedestrian_id": "patient_1", "mode": "keep_away"}],
    },
}


@pytest.fixture
def open_room_doc():
    return copy.deepcopy(OPEN_ROOM)


@pytest.fixture
def open_room(open_room_doc):
    return parse_scenario(open_room_doc)


@pytest.fixture
def open_world(open_room):
    spec, grid = open_room
    return World.from_scenario(spec, grid)


@pytest.fixture(scope="session")
def rule_table():
    return load_rule_table(RULES_PATH)


@pytest.fixture(scope="session")
def scripted(rule_table):
    return ScriptedModulator(rule_table)


@pytest.fixture
def metrics_config():
    return MetricsConfig()


@pytest.fixture(scope="session")
def bundled():
    """Loader for bundled scenarios by short name."""
    def _load(name):
        return load_scenario_with_grid(scenario_path(name))
    return _load
