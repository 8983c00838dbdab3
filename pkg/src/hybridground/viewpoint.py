"""Anchor/target extraction, anchor resolution and camera placement."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .camera import EPS, LookAtParams
from .errors import ExtractionError, ResolutionError, ResponseParseError, ValidationError
from .queries import QuerySpec
from .scene import Box, ObjectLookupTable, ObjectRecord, centers, records_matching
from .vlm import VLM, ChatRequest, build_anchor_prompt, parse_anchor_response, split_system

log = logging.getLogger(__name__)

VIEW_KINDS = ("query_aligned", "bev", "center2corner", "edge2center", "corner2center")
UP = (0.0, 0.0, 1.0)


@dataclass(frozen=True)
class AnchorResolution:
    anchor_label: str | None
    candidate_labels: tuple[str, ...]
    anchor_point: tuple[float, float, float]
    is_placeholder: bool
    anchor_id: int | None = None
    candidate_ids: tuple[int, ...] = ()

    def to_dict(self) -> dict:
        return {
            "anchor_label": self.anchor_label,
            "candidate_labels": list(self.candidate_labels),
            "anchor_point": list(self.anchor_point),
            "is_placeholder": self.is_placeholder,
            "anchor_id": self.anchor_id,
            "candidate_ids": list(self.candidate_ids),
        }


@dataclass(frozen=True)
class ViewStrategy:
    kind: str = "query_aligned"
    back_distance_factor: float = 0.5
    elevation_gain: float = 1.0

    def __post_init__(self):
        kind = self.kind.replace("-", "_").lower()
        if kind not in VIEW_KINDS:
            raise ValidationError(f"unknown view strategy {self.kind!r}")
        if self.back_distance_factor < 0:
            raise ValidationError("back_distance_factor must be >= 0")
        object.__setattr__(self, "kind", kind)


def extract_anchor_target(query: QuerySpec, vlm: VLM, attempts: int = 2,
                          max_tokens: int = 64) -> tuple[str, str | None]:
    system, user = split_system(build_anchor_prompt(query))
    req = ChatRequest(model=vlm.model, system_text=system, user_text=user, max_tokens=max_tokens)
    raw = ""
    for attempt in range(attempts):
        raw = vlm.chat(req)
        try:
            return parse_anchor_response(raw)
        except ResponseParseError:
            log.info("unparseable anchor response (attempt %d): %r", attempt + 1, raw[:120])
    raise ExtractionError(f"could not extract target/anchor after {attempts} attempts", raw)


def _nearest(records: list[ObjectRecord], point: np.ndarray) -> ObjectRecord:
    return min(records, key=lambda r: (float(np.linalg.norm(np.asarray(r.center) - point)), r.id))


def resolve_anchor(olt: ObjectLookupTable, anchor_label: str | None, target_label: str,
                   scene_center=None) -> AnchorResolution:
    """Locate the anchor in the OLT, or fall back to a placeholder built from target candidates.

    Several matching anchors resolve to the one nearest ``scene_center``
    (default: centroid of all OLT centers), ties to the lower id.
    """
    targets = records_matching(olt, target_label)
    target_ids = tuple(r.id for r in targets)
    anchors = records_matching(olt, anchor_label) if anchor_label else []
    if anchors:
        if scene_center is None:
            scene_center = centers(olt.records).mean(axis=0)
        rec = _nearest(anchors, np.asarray(scene_center, dtype=float))
        return AnchorResolution(anchor_label, (target_label,), rec.center, False, rec.id, target_ids)
    if not targets:
        raise ResolutionError(
            f"neither anchor {anchor_label!r} nor target {target_label!r} found in scene {olt.scene_id!r}"
        )
    point = centers(targets).mean(axis=0) if len(targets) > 1 else np.asarray(targets[0].center)
    return AnchorResolution(
        None, (target_label,), tuple(float(x) for x in point), True,
        targets[0].id if len(targets) == 1 else None, target_ids,
    )


def _bottom_corners(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return np.array([
        [lo[0], lo[1], lo[2]],
        [hi[0], lo[1], lo[2]],
        [hi[0], hi[1], lo[2]],
        [lo[0], hi[1], lo[2]],
    ])


def _pick(points: np.ndarray, ref: np.ndarray, farthest: bool) -> np.ndarray:
    d = np.linalg.norm(points - ref, axis=1)
    # argmax/argmin return the first of exact ties, so corner order breaks ties
    return points[np.argmax(d) if farthest else np.argmin(d)]


def _guard(eye: np.ndarray, at: np.ndarray, up) -> np.ndarray:
    eye = eye.copy()
    for _ in range(2):
        fwd = at - eye
        if np.linalg.norm(fwd) > EPS and np.linalg.norm(np.cross(up, fwd)) > EPS:
            break
        eye[0] += 0.01
    return eye


def select_viewpoint(strategy: ViewStrategy, bounds: Box, anchor: AnchorResolution,
                     ceiling_margin: float = 0.3) -> LookAtParams:
    lo, hi = bounds.min, bounds.max
    size = hi - lo
    if np.any(size <= 0):
        raise ValidationError(f"scene bounds must have positive volume, got size {tuple(size)}")
    center = (lo + hi) / 2
    a = np.asarray(anchor.anchor_point, dtype=float)
    kind = strategy.kind

    if kind == "query_aligned":
        eye0 = center.copy()
        horiz = eye0 - a
        horiz[2] = 0.0
        if np.linalg.norm(horiz) <= EPS:
            eye0[0] += 0.01
            horiz = eye0 - a
            horiz[2] = 0.0
        direction = horiz / np.linalg.norm(horiz)
        eye = eye0 + direction * strategy.back_distance_factor * float(np.hypot(size[0], size[1]))
        eye[2] = min(eye0[2] + strategy.elevation_gain, hi[2] - ceiling_margin)
        if eye[2] <= a[2]:
            # the ceiling clamp must not drop the camera to or below the anchor
            eye[2] = a[2] + max(strategy.elevation_gain, 0.01)
        at, up = a, np.array(UP)
    elif kind == "bev":
        eye = np.array([center[0], center[1], hi[2] + 0.5 * size[2]])
        at, up = center, np.array([0.0, 1.0, 0.0])
    elif kind == "center2corner":
        eye = center.copy()
        at = _pick(_bottom_corners(lo, hi), a, farthest=True)
        up = np.array(UP)
    elif kind == "edge2center":
        corners = _bottom_corners(lo, hi)
        edges = [(corners[i], corners[(i + 1) % 4]) for i in range(4)]
        lengths = np.array([np.linalg.norm(q - p) for p, q in edges])
        mids = np.array([(p + q) / 2 for (p, q), l in zip(edges, lengths) if l >= lengths.max() - EPS])
        eye = _pick(mids, a, farthest=False)
        eye[2] = lo[2] + 0.75 * size[2]
        at, up = center, np.array(UP)
    else:  # corner2center
        eye = _pick(_bottom_corners(lo, hi), a, farthest=False)
        eye[2] = lo[2] + 0.75 * size[2]
        at, up = center, np.array(UP)

    eye = _guard(np.asarray(eye, dtype=float), np.asarray(at, dtype=float), up)
    return LookAtParams(tuple(eye), tuple(np.asarray(at, dtype=float)), tuple(up))
