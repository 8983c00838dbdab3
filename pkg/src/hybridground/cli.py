"""Command line entry point: ground, batch, render, ablate-views, evaluate, make-fixture."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .camera import Intrinsics, LookAtParams, look_at_view_transform
from .errors import GroundingError
from .evaluation import GroundingResult, evaluate, load_ground_truth
from .mock import MockVLM
from .pipeline import PipelineConfig, ScenePaths, SceneStore, ablate_views, batch, build_view, ground
from .prompting import PROMPT_KINDS, PromptStyle
from .queries import QuerySpec, load_queries, read_jsonl, write_jsonl
from .render import RenderConfig, clip_ceiling, render, write_depth, write_png
from .scene import load_scene
from .viewpoint import ViewStrategy, extract_anchor_target
from .vlm import EndpointConfig, HttpVLM

STRATEGY_CHOICES = ["query-aligned", "bev", "center2corner", "edge2center", "corner2center"]


def _add_pipeline_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pipeline")
    g.add_argument("--view-strategy", choices=STRATEGY_CHOICES, default="query-aligned")
    g.add_argument("--back-distance-factor", type=float, default=0.5)
    g.add_argument("--elevation-gain", type=float, default=1.0)
    g.add_argument("--prompt-style", choices=PROMPT_KINDS, default="marker")
    g.add_argument("--alpha", type=float, default=0.2)
    g.add_argument("--epsilon", type=float, default=None,
                   help="depth tolerance in meters (default: 1%% of the scene diagonal)")
    g.add_argument("--width", type=int, default=1000)
    g.add_argument("--height", type=int, default=1000)
    g.add_argument("--fov", type=float, default=60.0, help="vertical field of view, degrees")
    g.add_argument("--splat-radius", type=int, default=2)
    g.add_argument("--ceiling-margin", type=float, default=0.3)
    g.add_argument("--output-dir", type=Path, default=None)
    v = p.add_argument_group("vlm")
    v.add_argument("--vlm", choices=["endpoint", "mock"], default="endpoint",
                   help="endpoint reads SEEGROUND_VLM_URL / _KEY / _MODEL")
    v.add_argument("--mock-rules", type=Path, default=None)
    v.add_argument("--model", default=None)
    v.add_argument("--max-in-flight", type=int, default=4)


def _config(args) -> PipelineConfig:
    return PipelineConfig(
        render=RenderConfig(
            intrinsics=Intrinsics(args.width, args.height, args.fov),
            splat_radius=args.splat_radius,
            ceiling_margin=args.ceiling_margin,
        ),
        strategy=ViewStrategy(args.view_strategy, args.back_distance_factor, args.elevation_gain),
        prompt_style=PromptStyle(args.prompt_style),
        alpha=args.alpha,
        epsilon=args.epsilon,
        output_dir=args.output_dir,
        max_in_flight=args.max_in_flight,
        eval_mode=getattr(args, "mode", "iou"),
    )


def _vlm(args):
    if args.vlm == "mock":
        return MockVLM.from_file(args.mock_rules) if args.mock_rules else MockVLM()
    return HttpVLM(EndpointConfig.from_env(model=args.model, max_in_flight=args.max_in_flight))


def _scene_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ply", type=Path, required=True)
    p.add_argument("--detections", type=Path, required=True)
    p.add_argument("--scene-id", default=None, help="defaults to the PLY file stem")


def _query(args) -> QuerySpec:
    return QuerySpec(args.query, args.scene_id or args.ply.stem)


def cmd_ground(args) -> int:
    query = _query(args)
    result = ground(ScenePaths(args.ply, args.detections), query, _config(args), _vlm(args))
    print(json.dumps(result.to_dict(), indent=2))
    return 0 if result.ok else 1


def cmd_batch(args) -> int:
    queries = load_queries(args.queries)
    rows = {r.get("query_id"): r for r in read_jsonl(args.queries)}
    cfg = _config(args)
    store = SceneStore(root=args.scenes_dir, ceiling_margin=cfg.render.ceiling_margin)
    results, report = batch(queries, cfg, _vlm(args), store, load_ground_truth_boxes(rows))
    write_jsonl([r.to_dict() for r in results], args.results)
    failed = sum(not r.ok for r in results)
    print(f"{len(results)} queries, {failed} errors, {store.detection_loads} scenes loaded")
    if report is not None:
        if args.metrics:
            args.metrics.write_text(report.to_json() + "\n")
        print(report.table())
    return 0


def load_ground_truth_boxes(rows: dict) -> dict:
    boxes = {}
    for qid, row in rows.items():
        if qid and row.get("gt_center") is not None and row.get("gt_size") is not None:
            boxes[qid] = load_ground_truth([row])[qid][1]
    return boxes


def cmd_render(args) -> int:
    cfg = _config(args)
    if args.eye is not None:
        cloud = clip_ceiling(load_scene(args.ply), cfg.render.ceiling_margin)
        pose = look_at_view_transform(LookAtParams(args.eye, args.at or (0, 0, 0), args.up))
        rendered = render(cloud, pose, cfg.render)
    else:
        if not (args.detections and args.query):
            print("render needs --eye/--at or --detections with --query", file=sys.stderr)
            return 2
        store = SceneStore(paths={"scene": ScenePaths(args.ply, args.detections)},
                           ceiling_margin=cfg.render.ceiling_margin)
        scene, _ = store.get("scene")
        target, anchor = extract_anchor_target(QuerySpec(args.query, "scene"), _vlm(args))
        rendered = build_view(scene, cfg.strategy, cfg, target, anchor).rendered
    write_png(rendered.rgb, args.png)
    if args.depth:
        write_depth(rendered.depth, args.depth)
    print(json.dumps({"png": str(args.png), "pose": rendered.pose.to_dict()}, indent=2))
    return 0


def cmd_ablate(args) -> int:
    query = _query(args)
    cfg = _config(args)
    store = SceneStore(paths={query.scene_id: ScenePaths(args.ply, args.detections)},
                       ceiling_margin=cfg.render.ceiling_margin)
    summary = ablate_views(store, query, cfg, _vlm(args))
    summary.pop("images")
    print(json.dumps(summary, indent=2))
    return 0


def cmd_evaluate(args) -> int:
    results = [GroundingResult.from_dict(d) for d in read_jsonl(args.results)]
    gt = load_ground_truth(read_jsonl(args.gt))
    report = evaluate(results, gt, args.mode)
    if args.metrics:
        args.metrics.write_text(report.to_json() + "\n")
    print(report.table())
    return 0


def cmd_make_fixture(args) -> int:
    from .synthetic import write_fixture

    for name, path in write_fixture(args.out).items():
        print(f"{name}: {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybridground", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ground", help="ground one query")
    _scene_args(p)
    p.add_argument("--query", required=True)
    _add_pipeline_args(p)
    p.set_defaults(func=cmd_ground)

    p = sub.add_parser("batch", help="ground a JSONL file of queries")
    p.add_argument("--queries", type=Path, required=True)
    p.add_argument("--scenes-dir", type=Path, required=True,
                   help="directory holding <scene_id>.ply and <scene_id>.json")
    p.add_argument("--results", type=Path, required=True)
    p.add_argument("--metrics", type=Path, default=None)
    p.add_argument("--mode", choices=["iou", "instance"], default="iou")
    _add_pipeline_args(p)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("render", help="render a scene to PNG (and optional depth raster)")
    p.add_argument("--ply", type=Path, required=True)
    p.add_argument("--detections", type=Path, default=None)
    p.add_argument("--query", default=None)
    p.add_argument("--eye", type=float, nargs=3, default=None)
    p.add_argument("--at", type=float, nargs=3, default=None)
    p.add_argument("--up", type=float, nargs=3, default=(0.0, 0.0, 1.0))
    p.add_argument("--png", type=Path, required=True)
    p.add_argument("--depth", type=Path, default=None)
    _add_pipeline_args(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("ablate-views", help="render all five view strategies for one query")
    _scene_args(p)
    p.add_argument("--query", required=True)
    _add_pipeline_args(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("evaluate", help="score a results JSONL against ground truth")
    p.add_argument("--results", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--mode", choices=["iou", "instance"], default="iou")
    p.add_argument("--metrics", type=Path, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("make-fixture", help="write the synthetic room fixture")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_make_fixture)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except GroundingError as e:
        print(f"error ({e.tag}): {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
