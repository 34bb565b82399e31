"""Shapes, head poses, boxes, rotations and the weak-perspective projection.

Every value type is immutable after construction and every operation is a
pure function, so everything here can be shared freely across threads.

Conventions: image coordinates are x-right / y-down pixels.  The rotation
produced by a ``HeadPose`` is ``R = Rz(roll) @ Ry(yaw) @ Rx(pitch)`` with
angles in degrees, pitch about x, yaw about y, roll about z.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import DegenerateProjection, GimbalLockWarning, NonOrthonormalInput

MEAN_FACE_POINT_COUNT = 68

# Outer eye corners in the 68-landmark ordering (0-based), used as the
# default inter-ocular error normalizer downstream.
LEFT_EYE_OUTER = 36
RIGHT_EYE_OUTER = 45


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Shape2D:
    """K landmark locations in pixels, stored as a read-only (K, 2) array."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValueError(f"expected a (K>=2, 2) point array, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("landmark coordinates must be finite")
        object.__setattr__(self, "points", _frozen(pts))

    @property
    def k(self) -> int:
        return self.points.shape[0]

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def flat(self) -> np.ndarray:
        """Flattened (x1, y1, ..., xK, yK) view of length 2K."""
        return self.points.reshape(-1)

    @classmethod
    def from_flat(cls, values) -> "Shape2D":
        return cls(np.asarray(values, dtype=float).reshape(-1, 2))


@dataclass(frozen=True, eq=False)
class Shape3D:
    """Canonical 68-point 3D face shape with its centroid at the origin.

    Model axes match the image convention under a frontal pose: x right,
    y down, z toward the camera.
    """

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.shape != (MEAN_FACE_POINT_COUNT, 3):
            raise ValueError(f"expected ({MEAN_FACE_POINT_COUNT}, 3) points, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("3D coordinates must be finite")
        if np.abs(pts.mean(axis=0)).max() > 1e-9:
            raise ValueError("centroid must be at the origin (use Shape3D.centered)")
        sv = np.linalg.svd(pts, compute_uv=False)
        if sv[1] <= 1e-12 * max(sv[0], 1e-300):
            raise ValueError("degenerate 3D shape: all points lie on a single line")
        object.__setattr__(self, "points", _frozen(pts))

    @classmethod
    def centered(cls, points) -> "Shape3D":
        pts = np.asarray(points, dtype=float)
        return cls(pts - pts.mean(axis=0))

    def frontal_width(self) -> float:
        """Width of the frontal (identity-pose) projection, in model units."""
        return float(np.ptp(self.points[:, 0]))


@dataclass(frozen=True)
class HeadPose:
    """Head orientation as pitch (nod), yaw (turn), roll (tilt) in degrees."""

    pitch: float
    yaw: float
    roll: float

    def __post_init__(self):
        for name in ("pitch", "yaw", "roll"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite")
            if abs(v) > 90.0:
                raise ValueError(f"{name}={v} outside [-90, 90] degrees")
            object.__setattr__(self, name, v)

    def as_array(self) -> np.ndarray:
        return np.array([self.pitch, self.yaw, self.roll], dtype=float)

    @classmethod
    def from_array(cls, values) -> "HeadPose":
        p, y, r = np.asarray(values, dtype=float)
        return cls(float(p), float(y), float(r))

    def max_abs_angle(self) -> float:
        return max(abs(self.pitch), abs(self.yaw), abs(self.roll))


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned face box: top-left corner (x, y), width w, height h."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box size must be positive, got w={self.w}, h={self.h}")

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x + self.w / 2.0, self.y + self.h / 2.0])

    @property
    def corners(self) -> np.ndarray:
        return np.array(
            [
                [self.x, self.y],
                [self.x + self.w, self.y],
                [self.x + self.w, self.y + self.h],
                [self.x, self.y + self.h],
            ]
        )

    def translated(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(self.x + dx, self.y + dy, self.w, self.h)


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """p -> scale * R(rotation) * p + translation, rotation in radians."""

    scale: float
    rotation: float
    translation: np.ndarray

    def __post_init__(self):
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"scale must be positive, got {self.scale}")
        t = np.asarray(self.translation, dtype=float)
        if t.shape != (2,) or not np.all(np.isfinite(t)):
            raise ValueError("translation must be a finite 2-vector")
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "rotation", float(self.rotation))
        object.__setattr__(self, "translation", _frozen(t))

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(1.0, 0.0, np.zeros(2))

    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        return self.scale * np.array([[c, -s], [s, c]])

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.matrix().T + self.translation

    def inverse(self) -> "SimilarityTransform":
        inv_scale = 1.0 / self.scale
        c, s = math.cos(-self.rotation), math.sin(-self.rotation)
        rot = np.array([[c, -s], [s, c]])
        return SimilarityTransform(inv_scale, -self.rotation, -inv_scale * (rot @ self.translation))

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """Transform equal to applying ``other`` first, then ``self``."""
        return SimilarityTransform(
            self.scale * other.scale,
            self.rotation + other.rotation,
            self.matrix() @ other.translation + self.translation,
        )


def euler_to_rotation(pose: HeadPose) -> np.ndarray:
    """3x3 rotation ``Rz(roll) @ Ry(yaw) @ Rx(pitch)`` for the given pose."""
    p, y, r = np.deg2rad(pose.as_array())
    cp, sp = math.cos(p), math.sin(p)
    cy, sy = math.cos(y), math.sin(y)
    cr, sr = math.cos(r), math.sin(r)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
    ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    rz = np.array([[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]])
    return rz @ ry @ rx


def rotation_to_euler(rotation: np.ndarray, *, atol: float = 1e-6) -> HeadPose:
    """Invert :func:`euler_to_rotation`.

    Raises :class:`NonOrthonormalInput` if the matrix is not a proper
    rotation within ``atol``.  At yaw = +/-90 degrees pitch and roll are not
    separable; a :class:`GimbalLockWarning` is emitted and roll is set to 0.
    """
    rot = np.asarray(rotation, dtype=float)
    if rot.shape != (3, 3):
        raise NonOrthonormalInput(f"expected a 3x3 matrix, got {rot.shape}")
    if not np.allclose(rot @ rot.T, np.eye(3), atol=atol):
        raise NonOrthonormalInput("matrix is not orthonormal")
    if np.linalg.det(rot) <= 0:
        raise NonOrthonormalInput("matrix is not right-handed (det <= 0)")

    sin_yaw = float(np.clip(-rot[2, 0], -1.0, 1.0))
    yaw = math.degrees(math.asin(sin_yaw))
    if 90.0 - abs(yaw) < 1e-6:
        warnings.warn("yaw at +/-90 degrees: pitch/roll not separable, roll set to 0",
                      GimbalLockWarning, stacklevel=2)
        sign = 1.0 if sin_yaw > 0 else -1.0
        pitch = math.degrees(math.atan2(sign * rot[0, 1], sign * rot[0, 2]))
        return HeadPose(pitch, math.copysign(90.0, sin_yaw), 0.0)
    pitch = math.degrees(math.atan2(rot[2, 1], rot[2, 2]))
    roll = math.degrees(math.atan2(rot[1, 0], rot[0, 0]))
    return HeadPose(pitch, yaw, roll)


def project_weak_perspective(shape3d: Shape3D, pose: HeadPose, bb: BoundingBox) -> Shape2D:
    """Scaled-orthographic projection of the 3D shape into a face box.

    The shape is rotated by the pose, depth is dropped, and the result is
    scaled so that a *frontal* projection would exactly span ``bb.w``; the
    projected centroid lands at the box center.
    """
    frontal_width = shape3d.frontal_width()
    if frontal_width <= 1e-12:
        raise DegenerateProjection("frontal projection of the 3D shape has zero width")
    rotated = shape3d.points @ euler_to_rotation(pose).T
    projected = rotated[:, :2] * (bb.w / frontal_width)
    if np.ptp(projected, axis=0).max() < 1e-9 * bb.w:
        raise DegenerateProjection("projected shape collapsed to near-zero extent")
    return Shape2D(projected + (bb.center - projected.mean(axis=0)))


def similarity_between_boxes(src: BoundingBox, dst: BoundingBox) -> SimilarityTransform:
    """Rotation-free similarity mapping ``src`` onto ``dst``.

    Scale is the width ratio and the translation carries the src center to
    the dst center.
    """
    scale = dst.w / src.w
    return SimilarityTransform(scale, 0.0, dst.center - scale * src.center)


def apply_similarity(transform: SimilarityTransform, shape: Shape2D) -> Shape2D:
    return Shape2D(transform.apply(shape.points))


def load_mean_face() -> Shape3D:
    """Load the canonical 3D mean face shipped with the package."""
    text = resources.files("posealign").joinpath("data/mean_face_3d.txt").read_text()
    rows = [line.split() for line in text.splitlines()
            if line.strip() and not line.lstrip().startswith("#")]
    return Shape3D.centered(np.array(rows, dtype=float))
