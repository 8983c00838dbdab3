"""IoU / instance-accuracy scoring and error-category bookkeeping."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import EvaluationError, ValidationError
from .queries import PARTITIONS, QuerySpec
from .scene import Box

THRESHOLDS = (0.25, 0.5)
ERROR_CATEGORIES = ("relation", "classification", "viewpoint", "localization")
HISTOGRAM_KEYS = ERROR_CATEGORIES + ("pipeline",)


def iou3d(a: Box, b: Box) -> float:
    """Intersection over union of two axis-aligned boxes."""
    a_lo, a_hi = a.min, a.max
    b_lo, b_hi = b.min, b.max
    overlap = np.clip(np.minimum(a_hi, b_hi) - np.maximum(a_lo, b_lo), 0.0, None)
    inter = float(np.prod(overlap))
    if inter == 0.0:
        return 0.0
    union = float(np.prod(a.size)) + float(np.prod(b.size)) - inter
    # rounding can push identical boxes a hair above 1
    return min(1.0, inter / union)


@dataclass(frozen=True)
class GroundingResult:
    query: QuerySpec
    predicted_id: int | None
    predicted_box: Box | None
    explanation: str = ""
    latency_ms: float = 0.0
    error: str | None = None
    error_message: str = ""
    trace: tuple = field(default=(), repr=False, compare=False)

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self) -> dict:
        out = {
            "query": self.query.to_dict(),
            "predicted_id": self.predicted_id,
            "predicted_box": (
                {"center": list(self.predicted_box.center), "size": list(self.predicted_box.size)}
                if self.predicted_box else None
            ),
            "explanation": self.explanation,
            "latency_ms": self.latency_ms,
            "error": self.error,
        }
        if self.error_message:
            out["error_message"] = self.error_message
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "GroundingResult":
        box = d.get("predicted_box")
        return cls(
            query=QuerySpec.from_dict(d["query"]),
            predicted_id=d.get("predicted_id"),
            predicted_box=Box(tuple(box["center"]), tuple(box["size"])) if box else None,
            explanation=d.get("explanation", ""),
            latency_ms=float(d.get("latency_ms", 0.0)),
            error=d.get("error"),
            error_message=d.get("error_message", ""),
        )


@dataclass(frozen=True)
class Score:
    iou: float | None
    hit_at: dict
    instance_hit: bool


@dataclass(frozen=True)
class MetricsReport:
    mode: str
    n: int
    acc_at: dict
    instance_acc: float
    subsets: dict
    error_histogram: dict
    scores: dict = field(default_factory=dict, repr=False, compare=False)
    annotations: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "n": self.n,
            "acc_at": {str(k): v for k, v in self.acc_at.items()},
            "instance_acc": self.instance_acc,
            "subsets": self.subsets,
            "error_histogram": self.error_histogram,
            "annotations": dict(sorted(self.annotations.items())),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def is_hit(self, query_id: str) -> bool:
        s = self.scores[query_id]
        return s.instance_hit if self.mode == "instance" else s.hit_at[0.5]

    def table(self) -> str:
        return format_table(self)


def _score(result: GroundingResult, gt_id, gt_box: Box | None) -> Score:
    if not result.ok or result.predicted_id is None:
        return Score(None, {t: False for t in THRESHOLDS}, False)
    iou = None
    if gt_box is not None and result.predicted_box is not None:
        iou = iou3d(result.predicted_box, gt_box)
    hit_at = {t: iou is not None and iou >= t for t in THRESHOLDS}
    return Score(iou, hit_at, gt_id is not None and result.predicted_id == gt_id)


def _rates(scores: Sequence[Score]) -> dict:
    n = len(scores)
    if n == 0:
        return {"n": 0, "acc@0.25": 0.0, "acc@0.5": 0.0, "instance_acc": 0.0}
    return {
        "n": n,
        "acc@0.25": sum(s.hit_at[0.25] for s in scores) / n,
        "acc@0.5": sum(s.hit_at[0.5] for s in scores) / n,
        "instance_acc": sum(s.instance_hit for s in scores) / n,
    }


def evaluate(results: Sequence[GroundingResult], gt: Mapping[str, tuple], mode: str = "iou") -> MetricsReport:
    """Score results against ``gt``: query_id -> (gt_id, gt_box or None)."""
    if mode not in ("iou", "instance"):
        raise ValidationError(f"unknown evaluation mode {mode!r}")
    scores: dict[str, Score] = {}
    by_tag: dict[str, list[Score]] = {}
    pipeline_errors = 0
    for res in results:
        qid = res.query.query_id
        if qid not in gt:
            raise EvaluationError(f"no ground truth for query {qid!r} ({res.query.text!r})")
        if qid in scores:
            raise EvaluationError(f"duplicate result for query {qid!r}")
        gt_id, gt_box = gt[qid]
        if mode == "iou" and gt_box is None:
            raise EvaluationError(f"iou mode needs a ground-truth box for query {qid!r}")
        s = _score(res, gt_id, gt_box)
        scores[qid] = s
        if not res.ok:
            pipeline_errors += 1
        for tag in res.query.subset_tags:
            by_tag.setdefault(tag, []).append(s)

    overall = _rates(list(scores.values()))
    subsets = {tag: _rates(by_tag.get(tag, [])) for pair in PARTITIONS for tag in pair if tag in by_tag}
    hist = {k: 0 for k in HISTOGRAM_KEYS}
    hist["pipeline"] = pipeline_errors
    return MetricsReport(
        mode=mode,
        n=overall["n"],
        acc_at={0.25: overall["acc@0.25"], 0.5: overall["acc@0.5"]},
        instance_acc=overall["instance_acc"],
        subsets=subsets,
        error_histogram=hist,
        scores=scores,
    )


def tally_error_category(report: MetricsReport, result: GroundingResult, category: str) -> MetricsReport:
    """Record a human-assigned error category for a missed query (re-annotation replaces)."""
    if category not in ERROR_CATEGORIES:
        raise ValidationError(f"unknown error category {category!r}; expected one of {ERROR_CATEGORIES}")
    qid = result.query.query_id
    if qid not in report.scores:
        raise ValidationError(f"query {qid!r} is not part of this report")
    if report.is_hit(qid):
        raise ValidationError(f"query {qid!r} is a hit; only misses can be annotated")
    annotations = dict(report.annotations)
    annotations[qid] = category
    counts = Counter(annotations.values())
    hist = {k: counts.get(k, 0) for k in ERROR_CATEGORIES}
    hist["pipeline"] = report.error_histogram["pipeline"]
    return replace(report, annotations=annotations, error_histogram=hist)


def _pct(x: float) -> str:
    return f"{100 * x:.1f}"


def format_table(report: MetricsReport) -> str:
    """Aligned-column summary: unique/multiple/overall for IoU, difficulty and view splits for instance."""
    rows: list[list[str]] = []
    if report.mode == "iou":
        groups = [("Unique", report.subsets.get("unique")), ("Multiple", report.subsets.get("multiple")),
                  ("Overall", {"acc@0.25": report.acc_at[0.25], "acc@0.5": report.acc_at[0.5], "n": report.n})]
        header = ["Split", "n", "Acc@0.25", "Acc@0.5"]
        for name, g in groups:
            if g is None:
                rows.append([name, "0", "-", "-"])
            else:
                rows.append([name, str(g["n"]), _pct(g["acc@0.25"]), _pct(g["acc@0.5"])])
    else:
        header = ["Split", "n", "Acc"]
        rows.append(["Overall", str(report.n), _pct(report.instance_acc)])
        for tag, name in (("easy", "Easy"), ("hard", "Hard"), ("view_dep", "Dep."), ("view_indep", "Indep.")):
            g = report.subsets.get(tag)
            rows.append([name, str(g["n"]) if g else "0", _pct(g["instance_acc"]) if g else "-"])
    widths = [max(len(r[i]) for r in rows + [header]) for i in range(len(header))]
    fmt = lambda r: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
    lines = [fmt(header), "  ".join("-" * w for w in widths)] + [fmt(r) for r in rows]
    return "\n".join(lines)


def load_ground_truth(rows) -> dict:
    """Ground truth from dicts with query_id, gt_id and optional gt_center/gt_size."""
    gt = {}
    for d in rows:
        if "query_id" not in d:
            raise ValidationError("ground-truth record missing 'query_id'")
        box = None
        if d.get("gt_center") is not None and d.get("gt_size") is not None:
            box = Box(tuple(map(float, d["gt_center"])), tuple(map(float, d["gt_size"])))
        gt[str(d["query_id"])] = (d.get("gt_id"), box)
    return gt
