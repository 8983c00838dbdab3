"""Depth-aware visibility and visual-prompt compositing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .render import RenderedImage, disc_offsets, visible_pixels
from .scene import ObjectLookupTable, match_label

PROMPT_KINDS = ("marker", "mask", "contour", "bbox")
MASK_OPACITY = 0.4
LINE_WIDTH = 2

# 5x7 digit glyphs, one string per row
_GLYPHS = {
    "0": ("01110", "10001", "10011", "10101", "11001", "10001", "01110"),
    "1": ("00100", "01100", "00100", "00100", "00100", "00100", "01110"),
    "2": ("01110", "10001", "00001", "00010", "00100", "01000", "11111"),
    "3": ("11111", "00010", "00100", "00010", "00001", "10001", "01110"),
    "4": ("00010", "00110", "01010", "10010", "11111", "00010", "00010"),
    "5": ("11111", "10000", "11110", "00001", "00001", "10001", "01110"),
    "6": ("00110", "01000", "10000", "11110", "10001", "10001", "01110"),
    "7": ("11111", "00001", "00010", "00100", "01000", "01000", "01000"),
    "8": ("01110", "10001", "10001", "01110", "10001", "10001", "01110"),
    "9": ("01110", "10001", "10001", "01111", "00001", "00010", "01100"),
}
GLYPH_W, GLYPH_H = 5, 7


def text_bitmap(text: str, height: int) -> np.ndarray:
    """Boolean bitmap of a digit string scaled by an integer factor to at most ``height`` rows."""
    scale = max(1, height // GLYPH_H)
    cols = []
    for k, ch in enumerate(text):
        if ch not in _GLYPHS:
            raise ValueError(f"no glyph for {ch!r}")
        if k:
            cols.append(np.zeros((GLYPH_H, 1), dtype=bool))
        cols.append(np.array([[c == "1" for c in row] for row in _GLYPHS[ch]], dtype=bool))
    glyphs = np.concatenate(cols, axis=1)
    return np.kron(glyphs, np.ones((scale, scale), dtype=bool))


@dataclass(frozen=True)
class PromptStyle:
    kind: str = "marker"
    marker_radius: int = 14
    font_height: int = 22
    color: tuple[int, int, int] = (220, 30, 30)
    text_color: tuple[int, int, int] = (255, 255, 255)

    def __post_init__(self):
        if self.kind not in PROMPT_KINDS:
            raise ValidationError(f"unknown prompt style {self.kind!r}")
        if self.marker_radius < self.font_height / 2:
            raise ValidationError("marker_radius must be at least font_height / 2")


@dataclass(frozen=True)
class VisibilityReport:
    object_id: int
    total_points: int
    visible_points: int
    visible_pixel_centroid: tuple[int, int] | None
    visible: bool
    alpha: float = 0.0
    # per-point flags and the (col, row) pixels of visible points
    point_visible: np.ndarray = field(default=None, repr=False, compare=False)
    visible_cols: np.ndarray = field(default=None, repr=False, compare=False)
    visible_rows: np.ndarray = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "object_id": self.object_id,
            "total_points": self.total_points,
            "visible_points": self.visible_points,
            "visible_pixel_centroid": (
                list(self.visible_pixel_centroid) if self.visible_pixel_centroid else None
            ),
            "visible": self.visible,
        }


@dataclass(frozen=True)
class PromptedImage:
    rgb: np.ndarray
    placed: tuple[tuple[int, tuple[int, int]], ...]
    style: PromptStyle
    base: RenderedImage
    footprint: np.ndarray = field(repr=False, compare=False, default=None)


def compute_visibility(points, rendered: RenderedImage, epsilon: float, alpha: float,
                       object_id: int = -1) -> VisibilityReport:
    """Count object points whose depth is within ``epsilon`` of the depth buffer."""
    if epsilon < 0:
        raise ValidationError("epsilon must be >= 0")
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError("alpha must lie in [0, 1]")
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    total = len(pts)
    flags = np.zeros(total, dtype=bool)
    if total == 0:
        empty = np.zeros(0, dtype=np.int64)
        return VisibilityReport(object_id, 0, 0, None, False, alpha, flags, empty, empty)

    idx, col, row, depth = visible_pixels(rendered.pose, rendered.intrinsics, pts)
    ok = depth <= rendered.depth[row, col] + epsilon
    flags[idx[ok]] = True
    cols, rows = col[ok], row[ok]
    n_vis = int(ok.sum())
    centroid = None
    if n_vis:
        centroid = (int(math.floor(cols.mean() + 0.5)), int(math.floor(rows.mean() + 0.5)))
    return VisibilityReport(object_id, total, n_vis, centroid, n_vis >= alpha * total, alpha,
                            flags, cols, rows)


def candidate_set(olt: ObjectLookupTable, target_label: str, anchor_label: str | None = None) -> list[int]:
    labels = [r.label for r in olt.records]
    hits = set(match_label(target_label, labels)) if target_label else set()
    if anchor_label:
        hits |= set(match_label(anchor_label, labels))
    if not hits:
        return olt.ids
    return [olt.records[i].id for i in sorted(hits)]


# ----------------------------------------------------------------- drawing


def _shift_or(mask: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    h, w = mask.shape
    out = np.zeros_like(mask)
    for dx, dy in offsets:
        src = mask[max(0, -dy):h - max(0, dy), max(0, -dx):w - max(0, dx)]
        out[max(0, dy):max(0, dy) + src.shape[0], max(0, dx):max(0, dx) + src.shape[1]] |= src
    return out


def _erode(mask: np.ndarray) -> np.ndarray:
    padded = np.pad(mask, 1, constant_values=False)
    return (padded[1:-1, 1:-1] & padded[:-2, 1:-1] & padded[2:, 1:-1]
            & padded[1:-1, :-2] & padded[1:-1, 2:])


def object_footprint(report: VisibilityReport, shape, splat_radius: int) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    if report.visible_points:
        mask[report.visible_rows, report.visible_cols] = True
        if splat_radius > 0:
            mask = _shift_or(mask, disc_offsets(splat_radius))
    return mask


def _disc_mask(shape, cx: int, cy: int, radius: int) -> np.ndarray:
    h, w = shape
    yy, xx = np.ogrid[:h, :w]
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= radius * radius


def _text_mask(shape, text: str, cx: int, cy: int, font_height: int) -> np.ndarray:
    bm = text_bitmap(text, font_height)
    th, tw = bm.shape
    top, left = cy - th // 2, cx - tw // 2
    mask = np.zeros(shape, dtype=bool)
    h, w = shape
    r0, r1 = max(0, top), min(h, top + th)
    c0, c1 = max(0, left), min(w, left + tw)
    if r0 < r1 and c0 < c1:
        mask[r0:r1, c0:c1] = bm[r0 - top:r1 - top, c0 - left:c1 - left]
    return mask


def _rect_outline(shape, r0: int, r1: int, c0: int, c1: int, width: int) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    mask[r0:r1 + 1, c0:c1 + 1] = True
    inner = np.zeros(shape, dtype=bool)
    inner[r0 + width:r1 + 1 - width, c0 + width:c1 + 1 - width] = True
    return mask & ~inner


def _paint(rgb: np.ndarray, mask: np.ndarray, color) -> None:
    rgb[mask] = np.asarray(color, dtype=np.uint8)


def place_prompts(rendered: RenderedImage, reports, olt: ObjectLookupTable,
                  style: PromptStyle | None = None) -> PromptedImage:
    """Composite prompts for visible objects; everything else keeps the rendered pixels."""
    style = style or PromptStyle()
    rgb = rendered.rgb.copy()
    shape = rendered.depth.shape
    footprint = np.zeros(shape, dtype=bool)
    placed = []
    for rep in sorted(reports, key=lambda r: r.object_id):
        if rep.object_id not in olt:
            raise ValidationError(f"visibility report for unknown object id {rep.object_id}")
        if not rep.visible or rep.visible_pixel_centroid is None:
            continue
        cx, cy = rep.visible_pixel_centroid
        label = str(rep.object_id)
        if style.kind == "marker":
            text = _text_mask(shape, label, cx, cy, style.font_height)
            th, tw = text_bitmap(label, style.font_height).shape
            radius = max(style.marker_radius, math.ceil(math.hypot(tw / 2, th / 2)) + 1)
            disc = _disc_mask(shape, cx, cy, radius)
            _paint(rgb, disc, style.color)
            _paint(rgb, text, style.text_color)
            footprint |= disc | text
        else:
            obj = object_footprint(rep, shape, rendered.splat_radius)
            if style.kind == "mask":
                blend = (1 - MASK_OPACITY) * rgb[obj] + MASK_OPACITY * np.asarray(style.color, float)
                rgb[obj] = np.floor(blend + 0.5).astype(np.uint8)
                text = _text_mask(shape, label, cx, cy, style.font_height)
                _paint(rgb, text, style.color)
                footprint |= obj | text
            elif style.kind == "contour":
                edge = obj.copy()
                for _ in range(LINE_WIDTH):
                    edge = _erode(edge)
                edge = obj & ~edge
                _paint(rgb, edge, style.color)
                footprint |= edge
            else:  # bbox
                rows, cols = np.nonzero(obj)
                box = _rect_outline(shape, rows.min(), rows.max(), cols.min(), cols.max(), LINE_WIDTH)
                _paint(rgb, box, style.color)
                footprint |= box
        placed.append((rep.object_id, (cx, cy)))
    return PromptedImage(rgb, tuple(placed), style, rendered, footprint)
