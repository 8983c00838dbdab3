import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybridground.camera import look_at_view_transform
from hybridground.errors import ExtractionError, ResolutionError, ValidationError
from hybridground.mock import MockVLM, Rule
from hybridground.queries import QuerySpec
from hybridground.scene import Box
from hybridground.viewpoint import (VIEW_KINDS, AnchorResolution, ViewStrategy, extract_anchor_target,
                                    resolve_anchor, select_viewpoint)

from conftest import make_olt

ROOM = Box.from_min_max((0, 0, 0), (4, 4, 3))


def anchor_at(point):
    return AnchorResolution("desk", ("lamp",), tuple(point), False, 1)


def test_bev_example():
    params = select_viewpoint(ViewStrategy("bev"), ROOM, anchor_at((3, 2, 1)))
    assert params.eye == (2, 2, 4.5)
    assert params.at == (2, 2, 1.5)
    pose = look_at_view_transform(params)
    np.testing.assert_allclose(pose.view_axis, [0, 0, -1], atol=1e-9)


def test_query_aligned_example_geometry():
    a = np.array([3.0, 2.0, 1.0])
    center = np.array([2.0, 2.0, 1.5])
    params = select_viewpoint(ViewStrategy("query_aligned", 0.5, 1.0), ROOM, anchor_at(a))
    eye = np.array(params.eye)
    assert params.at == (3, 2, 1)
    # horizontal offset from the room center is 0.5 x the floor diagonal
    assert math.dist(eye[:2], center[:2]) == pytest.approx(0.5 * math.sqrt(32), abs=1e-12)
    # anchor, center and eye are collinear in plan view, eye on the far side of the center
    u, v = center[:2] - a[:2], eye[:2] - a[:2]
    assert abs(u[0] * v[1] - u[1] * v[0]) < 1e-12
    assert np.dot(u, v) > 0 and np.linalg.norm(v) > np.linalg.norm(u)
    assert eye[2] == pytest.approx(2.5)
    np.testing.assert_allclose(eye, [2 - 0.5 * math.sqrt(32), 2, 2.5], atol=1e-12)


def test_query_aligned_respects_ceiling_and_stays_above_anchor():
    params = select_viewpoint(ViewStrategy("query_aligned", 0.5, 5.0), ROOM, anchor_at((3, 2, 1)))
    assert params.eye[2] == pytest.approx(2.7)
    params = select_viewpoint(ViewStrategy("query_aligned", 0.5, 1.0), ROOM, anchor_at((3, 2, 2.9)))
    assert params.eye[2] > 2.9


def test_query_aligned_degenerate_anchor_at_center():
    params = select_viewpoint(ViewStrategy("query_aligned"), ROOM, anchor_at((2, 2, 1.5)))
    pose = look_at_view_transform(params)
    assert params.at == (2, 2, 1.5)
    assert pose.eye[2] > 1.5


@settings(max_examples=200)
@given(st.sampled_from(VIEW_KINDS), st.floats(0, 4), st.floats(0, 4), st.floats(0, 3),
       st.floats(0, 2), st.floats(0, 3))
def test_every_strategy_yields_valid_pose(kind, ax, ay, az, factor, gain):
    params = select_viewpoint(ViewStrategy(kind, factor, gain), ROOM, anchor_at((ax, ay, az)))
    pose = look_at_view_transform(params)
    assert np.abs(pose.rotation @ pose.rotation.T - np.eye(3)).max() < 1e-9
    if kind == "query_aligned":
        assert params.at == (ax, ay, az)
        assert params.eye[2] > az


def test_static_baselines():
    a = anchor_at((0.5, 0.5, 0.5))
    c2c = select_viewpoint(ViewStrategy("center2corner"), ROOM, a)
    assert c2c.eye == (2, 2, 1.5) and c2c.at == (4, 4, 0)
    corner = select_viewpoint(ViewStrategy("corner2center"), ROOM, a)
    assert corner.eye == (0, 0, 2.25) and corner.at == (2, 2, 1.5)
    edge = select_viewpoint(ViewStrategy("edge2center"), ROOM, a)
    assert edge.eye == (2, 0, 2.25) and edge.at == (2, 2, 1.5)


def test_five_distinct_poses():
    poses = [look_at_view_transform(select_viewpoint(ViewStrategy(k), ROOM, anchor_at((3, 1, 0.5))))
             for k in VIEW_KINDS]
    keys = {(tuple(p.eye.round(9)), tuple(p.view_axis.round(9))) for p in poses}
    assert len(keys) == 5


def test_strategy_names():
    assert ViewStrategy("query-aligned").kind == "query_aligned"
    with pytest.raises(ValidationError):
        ViewStrategy("fisheye")


def test_resolve_single_anchor():
    olt = make_olt((1, "desk", (1, 2, 0.4), (1, 1, 0.8)), (2, "lamp", (1, 2, 1), (0.2, 0.2, 0.4)))
    res = resolve_anchor(olt, "desk", "lamp")
    assert res.anchor_point == (1, 2, 0.4)
    assert not res.is_placeholder
    assert res.anchor_id == 1
    assert res.candidate_ids == (2,)


def test_resolve_placeholder_centroid():
    olt = make_olt((1, "chair", (0, 0, 0), (1, 1, 1)), (2, "chair", (2, 0, 0), (1, 1, 1)))
    res = resolve_anchor(olt, None, "chair")
    assert res.anchor_point == (1, 0, 0)
    assert res.is_placeholder


def test_resolve_missing_anchor_falls_back_to_target():
    olt = make_olt((1, "chair", (0, 0, 0), (1, 1, 1)))
    res = resolve_anchor(olt, "dragon", "chair")
    assert res.is_placeholder and res.anchor_point == (0, 0, 0)


def test_resolve_nothing_found():
    olt = make_olt((1, "chair", (0, 0, 0), (1, 1, 1)))
    with pytest.raises(ResolutionError):
        resolve_anchor(olt, "unicorn", "unicorn")


def test_resolve_several_anchors_prefers_most_central():
    olt = make_olt((1, "table", (0, 0, 0), (1, 1, 1)), (2, "table", (2, 0, 0), (1, 1, 1)),
                   (3, "chair", (1.5, 0, 0), (1, 1, 1)))
    assert resolve_anchor(olt, "table", "chair").anchor_id == 2
    assert resolve_anchor(olt, "table", "chair", scene_center=(1, 0, 0)).anchor_id == 1


@pytest.mark.parametrize("text,expected", [
    ("Find the bowl that is on the dining table.", ("bowl", "dining table")),
    ("Identify the lamp that is on top of the desk.", ("lamp", "desk")),
    ("Find the window.", ("window", None)),
])
def test_extract_with_mock(text, expected):
    assert extract_anchor_target(QuerySpec(text, "s"), MockVLM()) == expected


def test_extract_gives_up_after_two_attempts():
    vlm = MockVLM([Rule(".*", "gibberish", "anchor")])
    with pytest.raises(ExtractionError) as err:
        extract_anchor_target(QuerySpec("Find the bowl.", "s"), vlm)
    assert vlm.calls == 2
    assert err.value.raw == "gibberish"
    assert err.value.tag == "extraction"
