import json
import shutil

import numpy as np
import pytest

from hybridground.camera import Intrinsics
from hybridground.mock import MockVLM, Rule
from hybridground.pipeline import (STAGES, TIMING_KEYS, PipelineConfig, ScenePaths, SceneStore,
                                   ablate_views, batch, ground, ground_loaded)
from hybridground.queries import QuerySpec, load_queries, query_hash
from hybridground.render import RenderConfig, read_png
from hybridground.viewpoint import VIEW_KINDS

SMALL = RenderConfig(Intrinsics(320, 240, 60))
SCENE = "synthetic_room"


def strip_timing(obj):
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k not in TIMING_KEYS}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


def test_single_query_hits(room_dir, room_mock):
    q = QuerySpec("Find the chair that is next to the table.", SCENE, 2)
    res = ground(ScenePaths.in_dir(room_dir, SCENE), q, PipelineConfig(render=SMALL), room_mock)
    assert res.ok, res.error_message
    assert res.predicted_id == 2
    assert res.predicted_box.center == (2.0, 1.6, 0.45)
    assert [s["stage"] for s in res.trace] == list(STAGES)


def test_trace_files_and_determinism(room_dir, tmp_path):
    q = QuerySpec("Identify the lamp that is on top of the desk.", SCENE, 8)
    docs = []
    for run in ("a", "b"):
        cfg = PipelineConfig(render=SMALL, output_dir=tmp_path / run)
        res = ground(ScenePaths.in_dir(room_dir, SCENE), q, cfg, MockVLM())
        assert res.predicted_id == 8
        d = tmp_path / run / SCENE / query_hash(SCENE, q.text)
        assert (d / "prompt.txt").read_text().endswith(f'"{q.text}".')
        img = read_png(d / "prompted.png")
        assert img.shape == (240, 320, 3)
        docs.append(json.loads((d / "trace.json").read_text()))
    a, b = strip_timing(docs[0]), strip_timing(docs[1])
    # paths differ only through the output dir, which never enters the trace
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
    assert [s["stage"] for s in a["stages"]] == list(STAGES)


def test_extraction_failure_is_recorded(room_dir, tmp_path):
    vlm = MockVLM([Rule(".*", "gibberish", "anchor")])
    q = QuerySpec("Find the chair that is next to the table.", SCENE, 2)
    res = ground(ScenePaths.in_dir(room_dir, SCENE), q, PipelineConfig(render=SMALL, output_dir=tmp_path), vlm)
    assert res.error == "extraction" and res.predicted_id is None
    stages = [s["stage"] for s in res.trace]
    assert stages == list(STAGES[:4]) + ["error"]
    doc = json.loads((tmp_path / SCENE / query_hash(SCENE, q.text) / "trace.json").read_text())
    assert doc["result"]["error"] == "extraction"
    assert not (tmp_path / SCENE / query_hash(SCENE, q.text) / "prompted.png").exists()


def test_missing_scene_is_recorded(tmp_path):
    q = QuerySpec("Find the chair.", "nowhere")
    res = ground(ScenePaths(tmp_path / "x.ply", tmp_path / "x.json"), q, PipelineConfig(render=SMALL), MockVLM())
    assert res.error == "parse" and "not found" in res.error_message


@pytest.fixture
def two_scenes(tmp_path, room_dir):
    for name in ("room_a", "room_b"):
        shutil.copy(room_dir / f"{SCENE}.ply", tmp_path / f"{name}.ply")
        doc = json.loads((room_dir / f"{SCENE}.json").read_text())
        doc["scene_id"] = name
        (tmp_path / f"{name}.json").write_text(json.dumps(doc))
    return tmp_path


def test_batch_loads_each_scene_once(two_scenes, room_mock):
    texts = [
        ("Find the chair that is next to the table.", 2),
        ("Find the chair that is next to the sofa.", 4),
        ("Identify the lamp that is on top of the desk.", 8),
        ("Find the cabinet.", 6),
        ("Find the sofa that is behind the wall.", 5),
    ]
    queries = [QuerySpec(t, scene, gt, query_id=f"{scene}-{i}")
               for scene in ("room_a", "room_b") for i, (t, gt) in enumerate(texts)]
    # one failing query out of ten
    queries[-1] = QuerySpec("zzz qqq xyzzy", "room_b", 1, query_id="room_b-bad")
    store = SceneStore(root=two_scenes)
    results, report = batch(queries, PipelineConfig(render=SMALL, max_in_flight=4), room_mock, store)
    assert store.detection_loads == 2
    assert [r.query.query_id for r in results] == [q.query_id for q in queries]
    assert sum(not r.ok for r in results) == 1
    assert results[-1].error == "extraction"
    assert report.n == 10 and report.acc_at[0.5] == 0.9
    assert report.error_histogram["pipeline"] == 1


def test_batch_rerun_identical_metrics(room_dir, room_mock):
    queries = load_queries(room_dir / "queries.jsonl")
    cfg = PipelineConfig(render=SMALL)
    _, r1 = batch(queries, cfg, room_mock, SceneStore(root=room_dir))
    _, r2 = batch(queries, cfg, MockVLM.from_file(room_dir / "mock_rules.json"), SceneStore(root=room_dir))
    assert r1.to_json() == r2.to_json()


def test_ablate_views(room_store, room_mock, tmp_path):
    q = QuerySpec("Locate the box that is under the table.", SCENE)
    summary = ablate_views(room_store, q, PipelineConfig(render=SMALL, output_dir=tmp_path), room_mock)
    views = summary["views"]
    assert list(views) == list(VIEW_KINDS)
    eyes = {tuple(np.round(v["pose"]["translation"], 9)) for v in views.values()}
    assert len(eyes) == 5
    np.testing.assert_allclose(views["bev"]["view_axis"], [0, 0, -1], atol=1e-9)
    assert len(summary["images"]) == 5
    out = tmp_path / SCENE / query_hash(SCENE, q.text) / "ablation"
    assert sorted(p.name for p in out.iterdir()) == sorted([f"{k}.png" for k in VIEW_KINDS] + ["poses.json"])


def test_ablate_views_placeholder_anchor(room_store):
    q = QuerySpec("Find the sofa that is next to the unicorn.", SCENE)
    summary = ablate_views(room_store, q, PipelineConfig(render=SMALL), MockVLM())
    assert all(v["placeholder_anchor"] for v in summary["views"].values())
    assert len(summary["images"]) == 5


def test_config_validation():
    with pytest.raises(ValueError):
        PipelineConfig(alpha=2)
    with pytest.raises(ValueError):
        PipelineConfig(epsilon=-0.1)


def test_ground_loaded_reuses_store(room_store, room_mock):
    cfg = PipelineConfig(render=SMALL)
    for text in ("Find the cabinet.", "Find the desk that is next to the lamp."):
        assert ground_loaded(room_store, QuerySpec(text, SCENE), cfg, room_mock).ok
    assert room_store.detection_loads == 1
