"""Look-at extrinsics and pinhole projection.

Camera frame: rows of the rotation are the camera x (image left), y (image up)
and z (forward) axes expressed in world coordinates. Depth is the z component.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, ValidationError

EPS = 1e-9


def _vec3(v, what: str) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(-1)
    if a.shape != (3,) or not np.isfinite(a).all():
        raise GeometryError(f"{what} must be a finite 3-vector, got {v!r}")
    return a


@dataclass(frozen=True)
class LookAtParams:
    eye: tuple[float, float, float]
    at: tuple[float, float, float]
    up: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self):
        for name in ("eye", "at", "up"):
            object.__setattr__(self, name, tuple(float(x) for x in _vec3(getattr(self, name), name)))


@dataclass(frozen=True)
class CameraPose:
    rotation: np.ndarray  # (3, 3), rows x_axis, y_axis, z_axis
    translation: np.ndarray  # camera position in world frame

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float).reshape(3)
        if r.shape != (3, 3):
            raise GeometryError(f"rotation must be 3x3, got {r.shape}")
        if not np.allclose(r @ r.T, np.eye(3), rtol=0, atol=EPS):
            raise GeometryError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > EPS:
            raise GeometryError("rotation determinant is not +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @property
    def eye(self) -> np.ndarray:
        return self.translation

    @property
    def view_axis(self) -> np.ndarray:
        return self.rotation[2]

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}


@dataclass(frozen=True)
class Intrinsics:
    image_width: int = 1000
    image_height: int = 1000
    vertical_fov: float = 60.0  # degrees

    def __post_init__(self):
        if int(self.image_width) < 1 or int(self.image_height) < 1:
            raise ValidationError("image width and height must be >= 1")
        if not 0.0 < float(self.vertical_fov) < 180.0:
            raise ValidationError("vertical_fov must lie in (0, 180) degrees")

    @property
    def focal(self) -> float:
        return (self.image_height / 2) / math.tan(math.radians(self.vertical_fov) / 2)


def look_at_view_transform(params: LookAtParams) -> CameraPose:
    eye = np.asarray(params.eye)
    at = np.asarray(params.at)
    up = np.asarray(params.up)

    forward = at - eye
    dist = np.linalg.norm(forward)
    if dist <= EPS:
        raise GeometryError(f"eye and look-at point coincide at {params.eye}")
    z_axis = forward / dist
    side = np.cross(up, z_axis)
    side_norm = np.linalg.norm(side)
    if side_norm <= EPS:
        raise GeometryError(f"up vector {params.up} is parallel to the view direction")
    x_axis = side / side_norm
    y_axis = np.cross(z_axis, x_axis)
    return CameraPose(np.stack([x_axis, y_axis, z_axis]), eye.copy())


def world_to_camera(pose: CameraPose, p) -> np.ndarray:
    """Camera-frame coordinates of one point (3,) or many points (N, 3)."""
    d = np.asarray(p, dtype=float) - pose.translation
    r = pose.rotation
    # explicit left-to-right sums instead of BLAS so results are bit-reproducible
    return np.stack([d[..., 0] * r[k, 0] + d[..., 1] * r[k, 1] + d[..., 2] * r[k, 2] for k in range(3)],
                    axis=-1)


def project_points(pose: CameraPose, intr: Intrinsics, points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized projection returning (u, v, depth) arrays.

    u and v are NaN for points with depth <= EPS (behind the camera).
    """
    cam = world_to_camera(pose, np.asarray(points, dtype=float).reshape(-1, 3))
    depth = cam[:, 2]
    front = depth > EPS
    f = intr.focal
    u = np.full(len(cam), np.nan)
    v = np.full(len(cam), np.nan)
    # camera x points to image left, hence the minus sign on u
    u[front] = intr.image_width / 2 - f * cam[front, 0] / depth[front]
    v[front] = intr.image_height / 2 - f * cam[front, 1] / depth[front]
    return u, v, depth


def project(pose: CameraPose, intr: Intrinsics, p) -> tuple[float, float, float] | None:
    """Pixel (u, v) and depth of a world point, or None when it is behind the camera."""
    u, v, d = project_points(pose, intr, _vec3(p, "point"))
    if not d[0] > EPS:
        return None
    return float(u[0]), float(v[0]), float(d[0])


def pixel_index(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-pixel (column, row); half-integers round up."""
    return np.floor(u + 0.5).astype(np.int64), np.floor(v + 0.5).astype(np.int64)
