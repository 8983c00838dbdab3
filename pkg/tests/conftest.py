from pathlib import Path

import numpy as np
import pytest

from hybridground.mock import MockVLM
from hybridground.pipeline import SceneStore
from hybridground.scene import ObjectLookupTable, ObjectRecord, PointCloud

FIXTURE_DIR = Path(__file__).parent / "fixtures" / "synthetic_room"
GOLDEN_DIR = Path(__file__).parent / "golden"


@pytest.fixture
def room_dir():
    return FIXTURE_DIR


@pytest.fixture
def room_store():
    return SceneStore(root=FIXTURE_DIR)


@pytest.fixture
def room_mock():
    return MockVLM.from_file(FIXTURE_DIR / "mock_rules.json")


def make_cloud(points, colors=None, scene_id="test"):
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if colors is None:
        colors = np.full((len(points), 3), 128, dtype=np.uint8)
    return PointCloud(points, colors, scene_id)


def make_olt(*records, scene_id="test"):
    return ObjectLookupTable(scene_id, tuple(ObjectRecord(*r) for r in records))


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
