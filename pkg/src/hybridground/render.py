"""Point-splat software rasterizer with a per-pixel z-buffer."""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import EPS, CameraPose, Intrinsics, pixel_index, project_points
from .errors import EmptySceneError, ValidationError
from .scene import PointCloud

DEPTH_MAGIC = b"SGDEPTH1"


@dataclass(frozen=True)
class RenderConfig:
    intrinsics: Intrinsics = field(default_factory=Intrinsics)
    splat_radius: int = 2
    background: tuple[int, int, int] = (255, 255, 255)
    ceiling_margin: float = 0.3

    def __post_init__(self):
        if not 0 <= int(self.splat_radius) <= 32:
            raise ValidationError("splat_radius must lie in [0, 32]")
        if self.ceiling_margin < 0:
            raise ValidationError("ceiling_margin must be >= 0")
        if len(self.background) != 3 or not all(0 <= c <= 255 for c in self.background):
            raise ValidationError("background must be an (r, g, b) triple in [0, 255]")


@dataclass(frozen=True)
class RenderedImage:
    rgb: np.ndarray  # (H, W, 3) uint8
    depth: np.ndarray  # (H, W) float64, +inf where empty
    owner: np.ndarray  # (H, W) int64 index of the winning point, -1 where empty
    pose: CameraPose
    intrinsics: Intrinsics
    splat_radius: int = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape

    def to_png(self) -> bytes:
        return encode_png(self.rgb)


def clip_ceiling(cloud: PointCloud, margin: float) -> PointCloud:
    """Drop points above ``max_z - margin``; the cutoff itself is kept."""
    if margin < 0:
        raise ValidationError("margin must be >= 0")
    z = cloud.points[:, 2]
    cutoff = z.max() - margin
    keep = z <= cutoff
    if not keep.any():
        raise EmptySceneError(
            f"ceiling clip at z={cutoff:.3f} removes every point of scene {cloud.scene_id!r}"
        )
    if keep.all():
        return cloud
    return cloud.subset(keep)


def disc_offsets(radius: int) -> np.ndarray:
    r = int(radius)
    dy, dx = np.mgrid[-r:r + 1, -r:r + 1]
    inside = dx * dx + dy * dy <= r * r
    return np.stack([dx[inside], dy[inside]], axis=1)


def visible_pixels(pose: CameraPose, intr: Intrinsics, points: np.ndarray):
    """Project points and keep those landing in front of the camera and inside the image.

    Returns (indices, cols, rows, depths) for the surviving points.
    """
    u, v, d = project_points(pose, intr, points)
    front = np.flatnonzero(d > EPS)
    col, row = pixel_index(u[front], v[front])
    inb = (col >= 0) & (col < intr.image_width) & (row >= 0) & (row < intr.image_height)
    return front[inb], col[inb], row[inb], d[front][inb]


def render(cloud: PointCloud, pose: CameraPose, config: RenderConfig | None = None) -> RenderedImage:
    config = config or RenderConfig()
    intr = config.intrinsics
    w, h = intr.image_width, intr.image_height

    idx, col, row, dep = visible_pixels(pose, intr, cloud.points)
    offs = disc_offsets(config.splat_radius)
    cc = (col[:, None] + offs[None, :, 0]).ravel()
    rr = (row[:, None] + offs[None, :, 1]).ravel()
    pid = np.repeat(idx, len(offs))
    dd = np.repeat(dep, len(offs))
    inb = (cc >= 0) & (cc < w) & (rr >= 0) & (rr < h)
    flat = rr[inb] * w + cc[inb]
    pid = pid[inb]
    dd = dd[inb]

    # nearest depth wins, ties go to the lower point index
    order = np.lexsort((pid, dd, flat))
    flat_sorted = flat[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = flat_sorted[1:] != flat_sorted[:-1]
    win = order[first]

    depth = np.full(h * w, np.inf)
    owner = np.full(h * w, -1, dtype=np.int64)
    rgb = np.empty((h * w, 3), dtype=np.uint8)
    rgb[:] = np.asarray(config.background, dtype=np.uint8)
    depth[flat[win]] = dd[win]
    owner[flat[win]] = pid[win]
    rgb[flat[win]] = cloud.colors[pid[win]]

    return RenderedImage(
        rgb.reshape(h, w, 3),
        depth.reshape(h, w),
        owner.reshape(h, w),
        pose,
        intr,
        int(config.splat_radius),
    )


def encode_png(rgb: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(rgb, dtype=np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


def write_png(rgb: np.ndarray, path) -> None:
    Path(path).write_bytes(encode_png(rgb))


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def write_depth(depth: np.ndarray, path) -> None:
    h, w = depth.shape
    with open(path, "wb") as fh:
        fh.write(DEPTH_MAGIC + struct.pack("<II", w, h))
        fh.write(np.asarray(depth, dtype="<f4").tobytes())


def read_depth(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:8] != DEPTH_MAGIC:
        raise ValueError(f"{path}: not a depth raster (bad magic)")
    w, h = struct.unpack("<II", data[8:16])
    body = np.frombuffer(data, dtype="<f4", offset=16)
    if body.size != w * h:
        raise ValueError(f"{path}: expected {w * h} depth values, found {body.size}")
    return body.reshape(h, w)
