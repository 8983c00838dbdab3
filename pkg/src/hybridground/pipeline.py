"""End-to-end grounding: scene -> prompted render + description -> VLM -> 3D box."""

from __future__ import annotations

import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .camera import CameraPose, look_at_view_transform
from .errors import GroundingError, UnknownObjectError, ValidationError
from .evaluation import GroundingResult, MetricsReport, evaluate
from .prompting import PromptStyle, PromptedImage, candidate_set, compute_visibility, place_prompts
from .queries import QuerySpec, query_hash
from .render import RenderConfig, RenderedImage, clip_ceiling, encode_png, render, write_png
from .scene import (Box, ObjectLookupTable, PointCloud, SceneDescription, describe_scene,
                    load_detections, load_scene, object_points)
from .viewpoint import (VIEW_KINDS, AnchorResolution, ViewStrategy, extract_anchor_target,
                        resolve_anchor, select_viewpoint)
from .vlm import VLM, ChatRequest, build_grounding_prompt, parse_grounding_response, split_system

log = logging.getLogger(__name__)

STAGES = (
    "load_scene", "clip_ceiling", "build_olt", "describe_scene", "extract_anchor_target",
    "resolve_anchor", "select_viewpoint", "look_at_view_transform", "render", "candidate_set",
    "compute_visibility", "place_prompts", "build_grounding_prompt", "chat",
    "parse_grounding_response", "lookup_box",
)
TIMING_KEYS = ("ms", "latency_ms")


@dataclass(frozen=True)
class PipelineConfig:
    render: RenderConfig = field(default_factory=RenderConfig)
    strategy: ViewStrategy = field(default_factory=ViewStrategy)
    prompt_style: PromptStyle = field(default_factory=PromptStyle)
    alpha: float = 0.2
    epsilon: float | None = None  # None: 1% of the scene diagonal
    point_pad: float = 0.0
    output_dir: Path | None = None
    max_in_flight: int = 4
    max_tokens: int = 512
    eval_mode: str = "iou"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError("alpha must lie in [0, 1]")
        if self.epsilon is not None and self.epsilon < 0:
            raise ValidationError("epsilon must be >= 0")
        if self.output_dir is not None:
            object.__setattr__(self, "output_dir", Path(self.output_dir))


@dataclass(frozen=True)
class ScenePaths:
    ply: Path
    detections: Path

    @classmethod
    def in_dir(cls, root, scene_id: str) -> "ScenePaths":
        root = Path(root)
        return cls(root / f"{scene_id}.ply", root / f"{scene_id}.json")


@dataclass(frozen=True)
class LoadedScene:
    scene_id: str
    bounds: Box  # of the unclipped cloud
    cloud: PointCloud  # after ceiling clipping
    olt: ObjectLookupTable
    description: SceneDescription

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.bounds.size))


class SceneStore:
    """Loads each scene once; the OLT and description are shared by every query on it."""

    def __init__(self, root=None, paths: dict | None = None, ceiling_margin: float = 0.3):
        self.root = Path(root) if root is not None else None
        self.paths = dict(paths or {})
        self.ceiling_margin = ceiling_margin
        self.detection_loads = 0
        self._cache: dict[str, tuple[LoadedScene, dict]] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def paths_for(self, scene_id: str) -> ScenePaths:
        if scene_id in self.paths:
            return self.paths[scene_id]
        if self.root is None:
            raise ValidationError(f"no files registered for scene {scene_id!r}")
        return ScenePaths.in_dir(self.root, scene_id)

    def get(self, scene_id: str) -> tuple[LoadedScene, dict]:
        """The loaded scene plus per-stage trace records of how it was built."""
        with self._guard:
            lock = self._locks.setdefault(scene_id, threading.Lock())
        with lock:
            if scene_id not in self._cache:
                self._cache[scene_id] = self._load(scene_id)
            return self._cache[scene_id]

    def _load(self, scene_id: str):
        paths = self.paths_for(scene_id)
        trace = {}
        t = time.perf_counter()
        raw = load_scene(paths.ply, scene_id)
        trace["load_scene"] = {"path": str(paths.ply), "points": len(raw), "ms": _ms(t)}
        t = time.perf_counter()
        cloud = clip_ceiling(raw, self.ceiling_margin)
        trace["clip_ceiling"] = {"margin": self.ceiling_margin, "points": len(cloud), "ms": _ms(t)}
        t = time.perf_counter()
        olt = load_detections(paths.detections)
        with self._guard:
            self.detection_loads += 1
        trace["build_olt"] = {"path": str(paths.detections), "objects": len(olt), "ms": _ms(t)}
        t = time.perf_counter()
        desc = describe_scene(olt)
        trace["describe_scene"] = {"lines": len(desc.object_ids), "ms": _ms(t)}
        return LoadedScene(scene_id, raw.bounds(), cloud, olt, desc), trace


def _ms(t0: float) -> float:
    return round((time.perf_counter() - t0) * 1000, 3)


class Trace:
    def __init__(self):
        self.stages: list[dict] = []

    def add(self, stage: str, **info) -> None:
        self.stages.append({"stage": stage, **info})

    def to_dict(self) -> list[dict]:
        return self.stages


@dataclass
class ViewBundle:
    """Everything produced between query parsing and prompt compositing."""

    target: str
    anchor: str | None
    resolution: AnchorResolution
    pose: CameraPose
    rendered: RenderedImage
    candidates: list[int]
    reports: list
    prompted: PromptedImage


def _epsilon(cfg: PipelineConfig, scene: LoadedScene) -> float:
    return cfg.epsilon if cfg.epsilon is not None else 0.01 * scene.diagonal


def build_view(scene: LoadedScene, strategy: ViewStrategy, cfg: PipelineConfig, target: str,
               anchor: str | None, trace: Trace | None = None) -> ViewBundle:
    trace = trace or Trace()
    t = time.perf_counter()
    res = resolve_anchor(scene.olt, anchor, target)
    trace.add("resolve_anchor", **res.to_dict(), ms=_ms(t))

    t = time.perf_counter()
    params = select_viewpoint(strategy, scene.bounds, res, cfg.render.ceiling_margin)
    trace.add("select_viewpoint", kind=strategy.kind, eye=list(params.eye), at=list(params.at),
              up=list(params.up), ms=_ms(t))

    t = time.perf_counter()
    pose = look_at_view_transform(params)
    trace.add("look_at_view_transform", **pose.to_dict(), ms=_ms(t))

    t = time.perf_counter()
    rendered = render(scene.cloud, pose, cfg.render)
    trace.add("render", width=cfg.render.intrinsics.image_width,
              height=cfg.render.intrinsics.image_height,
              covered_pixels=int(np.isfinite(rendered.depth).sum()), ms=_ms(t))

    t = time.perf_counter()
    cands = candidate_set(scene.olt, target, anchor)
    trace.add("candidate_set", ids=cands, ms=_ms(t))

    t = time.perf_counter()
    eps = _epsilon(cfg, scene)
    reports = []
    for oid in cands:
        idx = object_points(scene.cloud, scene.olt.get(oid), cfg.point_pad)
        reports.append(compute_visibility(scene.cloud.points[idx], rendered, eps, cfg.alpha, oid))
    trace.add("compute_visibility", epsilon=eps, alpha=cfg.alpha,
              reports=[r.to_dict() for r in reports], ms=_ms(t))

    t = time.perf_counter()
    prompted = place_prompts(rendered, reports, scene.olt, cfg.prompt_style)
    trace.add("place_prompts", style=cfg.prompt_style.kind,
              placed=[[oid, list(c)] for oid, c in prompted.placed], ms=_ms(t))
    return ViewBundle(target, anchor, res, pose, rendered, cands, reports, prompted)


def _query_dir(cfg: PipelineConfig, query: QuerySpec) -> Path | None:
    if cfg.output_dir is None:
        return None
    d = cfg.output_dir / query.scene_id / query_hash(query.scene_id, query.text)
    d.mkdir(parents=True, exist_ok=True)
    return d


def ground_loaded(store: SceneStore, query: QuerySpec, cfg: PipelineConfig, vlm: VLM) -> GroundingResult:
    """Run one query; stage failures become an error-tagged result, never an exception."""
    t_start = time.perf_counter()
    trace = Trace()
    out = _query_dir(cfg, query)
    prompt = None
    prompted = None
    result: GroundingResult
    try:
        scene, load_trace = store.get(query.scene_id)
        for stage in ("load_scene", "clip_ceiling", "build_olt", "describe_scene"):
            trace.add(stage, **load_trace[stage])

        t = time.perf_counter()
        target, anchor = extract_anchor_target(query, vlm)
        trace.add("extract_anchor_target", target=target, anchor=anchor, ms=_ms(t))

        view = build_view(scene, cfg.strategy, cfg, target, anchor, trace)
        prompted = view.prompted

        t = time.perf_counter()
        prompt = build_grounding_prompt(scene.description, query)
        trace.add("build_grounding_prompt", chars=len(prompt), ms=_ms(t))

        t = time.perf_counter()
        system, user = split_system(prompt)
        raw = vlm.chat(ChatRequest(model=vlm.model, system_text=system, user_text=user,
                                   image=encode_png(prompted.rgb), max_tokens=cfg.max_tokens))
        trace.add("chat", model=vlm.model, response=raw, ms=_ms(t))

        t = time.perf_counter()
        answer = parse_grounding_response(raw)
        trace.add("parse_grounding_response", predicted_id=answer.predicted_id,
                  explanation=answer.explanation, ms=_ms(t))

        t = time.perf_counter()
        if answer.predicted_id not in scene.olt:
            raise UnknownObjectError(
                f"VLM predicted id {answer.predicted_id}, which is not in scene {query.scene_id!r}"
            )
        rec = scene.olt.get(answer.predicted_id)
        trace.add("lookup_box", center=list(rec.center), size=list(rec.size), ms=_ms(t))
        result = GroundingResult(query, rec.id, rec.box, answer.explanation, _ms(t_start))
    except GroundingError as e:
        log.info("query %s failed: %s", query.query_id, e)
        trace.add("error", tag=e.tag, message=str(e))
        result = GroundingResult(query, None, None, "", _ms(t_start), e.tag, str(e))
    except (OSError, ValueError, KeyError) as e:
        log.info("query %s failed: %s", query.query_id, e)
        trace.add("error", tag="pipeline", message=str(e))
        result = GroundingResult(query, None, None, "", _ms(t_start), "pipeline", str(e))

    if out is not None:
        if prompt is not None:
            (out / "prompt.txt").write_text(prompt)
        if prompted is not None:
            write_png(prompted.rgb, out / "prompted.png")
        doc = {"query": query.to_dict(), "stages": trace.to_dict(), "result": result.to_dict()}
        (out / "trace.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    return replace(result, trace=tuple(trace.to_dict()))


def ground(paths: ScenePaths, query: QuerySpec, cfg: PipelineConfig, vlm: VLM) -> GroundingResult:
    store = SceneStore(paths={query.scene_id: paths}, ceiling_margin=cfg.render.ceiling_margin)
    return ground_loaded(store, query, cfg, vlm)


def ground_truth_for(store: SceneStore, queries: Sequence[QuerySpec], extra: dict | None = None) -> dict:
    """query_id -> (gt_id, gt_box) using the OLT box of the ground-truth id unless overridden."""
    extra = extra or {}
    gt = {}
    for q in queries:
        if q.gt_object_id is None:
            continue
        box = extra.get(q.query_id)
        if box is None:
            try:
                scene, _ = store.get(q.scene_id)
                if q.gt_object_id in scene.olt:
                    box = scene.olt.get(q.gt_object_id).box
            except (GroundingError, OSError):
                box = None
        gt[q.query_id] = (q.gt_object_id, box)
    return gt


def batch(queries: Sequence[QuerySpec], cfg: PipelineConfig, vlm: VLM, store: SceneStore,
          gt_boxes: dict | None = None) -> tuple[list[GroundingResult], MetricsReport | None]:
    """Ground all queries with bounded concurrency; results keep the input order."""
    workers = max(1, cfg.max_in_flight)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda q: ground_loaded(store, q, cfg, vlm), queries))
    gt = ground_truth_for(store, queries, gt_boxes)
    scored = [r for r in results if r.query.query_id in gt]
    report = None
    if scored:
        mode = cfg.eval_mode
        if mode == "iou" and any(gt[r.query.query_id][1] is None for r in scored):
            mode = "instance"
        report = evaluate(scored, gt, mode)
    return results, report


def ablate_views(store: SceneStore, query: QuerySpec, cfg: PipelineConfig, vlm: VLM) -> dict:
    """Render every view strategy with identical prompt settings."""
    scene, _ = store.get(query.scene_id)
    target, anchor = extract_anchor_target(query, vlm)
    out = _query_dir(cfg, query)
    summary = {"query": query.to_dict(), "target": target, "anchor": anchor, "views": {}}
    images = {}
    for kind in VIEW_KINDS:
        strategy = ViewStrategy(kind, cfg.strategy.back_distance_factor, cfg.strategy.elevation_gain)
        view = build_view(scene, strategy, cfg, target, anchor)
        target_ids = set(view.resolution.candidate_ids)
        visible = [r.object_id for r in view.reports if r.visible]
        summary["views"][kind] = {
            "pose": view.pose.to_dict(),
            "view_axis": view.pose.view_axis.tolist(),
            "placeholder_anchor": view.resolution.is_placeholder,
            "visible_candidates": len(visible),
            "visible_targets": len([i for i in visible if i in target_ids]),
            "placed": [oid for oid, _ in view.prompted.placed],
        }
        images[kind] = view.prompted
        if out is not None:
            (out / "ablation").mkdir(exist_ok=True)
            write_png(view.prompted.rgb, out / "ablation" / f"{kind}.png")
    if out is not None:
        (out / "ablation" / "poses.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    summary["images"] = images
    return summary
