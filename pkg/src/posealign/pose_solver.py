"""Closed-form head pose from 2D landmarks and the canonical 3D shape.

Solves argmin over (R, s, t) of sum_k || s * P @ R @ p3d_k + t - x_k ||^2
where P drops the depth row.  Centroids remove t, an unconstrained
least-squares 2x3 map A absorbs s * P @ R, and the polar decomposition of A
lifts its rotation part; the scale is the mean of A's singular values.  For
noise-free weak-perspective landmarks the recovery is exact, which is what
makes the solver usable as a ground-truth pose annotator.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput
from .geometry import HeadPose, Shape2D, Shape3D, rotation_to_euler


@dataclass(frozen=True, eq=False)
class PoseFit:
    """Recovered pose with the fitted projection parameters."""

    pose: HeadPose
    scale: float
    translation: np.ndarray
    residual: float

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        t = np.array(np.asarray(self.translation, dtype=float))
        if t.shape != (2,) or not np.all(np.isfinite(t)):
            raise ValueError("translation must be a finite 2-vector")
        t.flags.writeable = False
        object.__setattr__(self, "translation", t)
        if not self.residual >= 0:
            raise ValueError(f"residual must be non-negative, got {self.residual}")


def fit_pose_from_landmarks(landmarks: Shape2D, shape3d: Shape3D) -> PoseFit:
    """Fit (pose, scale, translation) mapping ``shape3d`` onto ``landmarks``.

    Raises DegenerateInput when the landmarks are collinear (the 2x3 map is
    then not uniquely determined).
    """
    if landmarks.k != shape3d.points.shape[0]:
        raise DegenerateInput(
            f"landmark count {landmarks.k} does not match 3D model "
            f"{shape3d.points.shape[0]}")
    x2d = landmarks.points
    p3d = shape3d.points

    c2d = x2d.mean(axis=0)
    xc = x2d - c2d
    sv2d = np.linalg.svd(xc, compute_uv=False)
    if sv2d[1] <= 1e-9 * max(sv2d[0], 1e-300):
        raise DegenerateInput("landmarks are collinear or coincident")

    # Best unconstrained 2x3 linear map A with A @ p3d_k ~= xc_k, then the
    # nearest scaled row-orthonormal map via SVD (polar factor).
    a_map, *_ = np.linalg.lstsq(p3d, xc, rcond=None)
    a_map = a_map.T
    u, sigma, vt = np.linalg.svd(a_map, full_matrices=False)
    if sigma[1] <= 1e-12 * max(sigma[0], 1e-300):
        raise DegenerateInput("fitted projection is rank-deficient")
    rows2 = u @ vt
    scale = float(sigma.mean())

    rotation = np.vstack([rows2, np.cross(rows2[0], rows2[1])])
    pose = rotation_to_euler(rotation, atol=1e-6)

    projected = scale * (p3d @ rows2.T)
    translation = c2d - projected.mean(axis=0)
    errors = projected + translation - x2d
    residual = float(np.sqrt(np.mean(np.sum(errors ** 2, axis=1))))
    return PoseFit(pose=pose, scale=scale, translation=translation, residual=residual)
