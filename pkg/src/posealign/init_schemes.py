"""Initialization shapes for the cascade: mean, random, 3D-projected, pose k-NN.

All schemes return shapes already placed inside the target face box, so the
cascade can start from them directly.  Exemplar shapes move between boxes via
the rotation-free box similarity, which keeps every scheme equivariant under
box translation and scaling.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (BOX_DILATION, load_bbox_csv, load_pose_csv, load_pts,
                   tight_box, write_bbox_csv, write_pose_csv, write_pts)
from .errors import ParseError, ShapeMismatch
from .geometry import (
    BoundingBox,
    HeadPose,
    Shape2D,
    Shape3D,
    apply_similarity,
    load_mean_face,
    project_weak_perspective,
    similarity_between_boxes,
)
from .pose_solver import fit_pose_from_landmarks

UNIT_BOX = BoundingBox(0.0, 0.0, 1.0, 1.0)


@dataclass(frozen=True, eq=False)
class TrainExemplar:
    """Ground-truth shape with its face box and solver-fitted pose."""

    exemplar_id: str
    shape: Shape2D
    bb: BoundingBox
    pose: HeadPose


@dataclass(frozen=True, eq=False)
class InitSet:
    """Ordered initialization shapes produced by one scheme."""

    shapes: tuple[Shape2D, ...]
    scheme: str

    def __post_init__(self):
        shapes = tuple(self.shapes)
        if not shapes:
            raise ValueError("InitSet requires at least one shape")
        k = shapes[0].k
        if any(s.k != k for s in shapes):
            raise ShapeMismatch("all initialization shapes must share the same K")
        object.__setattr__(self, "shapes", shapes)

    def __len__(self) -> int:
        return len(self.shapes)

    @property
    def k(self) -> int:
        return self.shapes[0].k


def exemplars_from_samples(samples, shape3d: Shape3D | None = None) -> list[TrainExemplar]:
    """Build the exemplar set from landmarked samples, fitting each pose."""
    if shape3d is None:
        shape3d = load_mean_face()
    exemplars = []
    for sample in samples:
        if sample.landmarks is None:
            raise ValueError(f"sample {sample.sample_id!r} has no landmarks")
        fit = fit_pose_from_landmarks(sample.landmarks, shape3d)
        exemplars.append(TrainExemplar(sample.sample_id, sample.landmarks, sample.bb, fit.pose))
    return exemplars


def _require_exemplars(exemplars) -> list[TrainExemplar]:
    exemplars = list(exemplars)
    if not exemplars:
        raise ValueError("need at least one exemplar")
    k = exemplars[0].shape.k
    if any(e.shape.k != k for e in exemplars):
        raise ShapeMismatch("exemplar shapes disagree on K")
    return exemplars


def mean_shape_init(exemplars, bb: BoundingBox) -> Shape2D:
    """Average of exemplar shapes in the unit-box frame, placed into ``bb``."""
    exemplars = _require_exemplars(exemplars)
    acc = np.zeros_like(exemplars[0].shape.points)
    for ex in exemplars:
        acc += apply_similarity(similarity_between_boxes(ex.bb, UNIT_BOX), ex.shape).points
    mean_unit = Shape2D(acc / len(exemplars))
    return apply_similarity(similarity_between_boxes(UNIT_BOX, bb), mean_unit)


def random_init(exemplars, bb: BoundingBox, n: int, seed) -> InitSet:
    """``n`` exemplar shapes drawn uniformly and re-boxed into ``bb``.

    Sampling is without replacement; when n exceeds the exemplar count it
    falls back to with-replacement draws.
    """
    exemplars = _require_exemplars(exemplars)
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(exemplars), size=n, replace=n > len(exemplars))
    shapes = tuple(
        apply_similarity(similarity_between_boxes(exemplars[i].bb, bb), exemplars[i].shape)
        for i in idx
    )
    return InitSet(shapes=shapes, scheme="random")


def scheme1_3d_init(pose: HeadPose, bb: BoundingBox, shape3d: Shape3D,
                    dilation: float = BOX_DILATION) -> Shape2D:
    """Project the canonical 3D shape under the estimated pose into the box.

    The raw projection is placed through the same convention that produces
    dataset face boxes: its own tight landmark box, dilated by ``dilation``,
    is similarity-mapped onto ``bb``.  Without this the projection's scale
    would drift against exemplar shapes as the pose foreshortens the face.
    """
    projected = project_weak_perspective(shape3d, pose, UNIT_BOX)
    source_box = tight_box(projected, dilation=dilation)
    return apply_similarity(similarity_between_boxes(source_box, bb), projected)


def pose_distance(a: HeadPose, b: HeadPose) -> float:
    """Unweighted Euclidean distance in (pitch, yaw, roll) degree space."""
    return float(np.linalg.norm(a.as_array() - b.as_array()))


def scheme2_knn_init(pose: HeadPose, bb: BoundingBox, exemplars, k: int) -> InitSet:
    """Shapes of the k exemplars nearest in pose space, re-boxed into ``bb``.

    Ties in pose distance break toward the lexicographically smaller
    exemplar id, making the result order deterministic.
    """
    exemplars = _require_exemplars(exemplars)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > len(exemplars):
        raise ValueError(f"k={k} exceeds exemplar count {len(exemplars)}")
    ranked = sorted(exemplars, key=lambda ex: (pose_distance(pose, ex.pose), ex.exemplar_id))
    shapes = tuple(
        apply_similarity(similarity_between_boxes(ex.bb, bb), ex.shape)
        for ex in ranked[:k]
    )
    return InitSet(shapes=shapes, scheme="knn")


def aggregate_median(predictions) -> Shape2D:
    """Coordinate-wise median of predicted shapes (midpoint on even counts)."""
    predictions = list(predictions)
    if not predictions:
        raise ValueError("need at least one prediction")
    k = predictions[0].k
    if any(p.k != k for p in predictions):
        raise ShapeMismatch("predictions disagree on K")
    stack = np.stack([p.points for p in predictions])
    return Shape2D(np.median(stack, axis=0))


# ---------------------------------------------------------------------------
# exemplar store


def save_exemplars(exemplars, out_dir) -> None:
    """Persist exemplars as pts files plus bbox and pose-index CSVs."""
    out = Path(out_dir)
    (out / "landmarks").mkdir(parents=True, exist_ok=True)
    boxes = {}
    poses = {}
    for ex in exemplars:
        write_pts(out / "landmarks" / f"{ex.exemplar_id}.pts", ex.shape)
        boxes[ex.exemplar_id] = ex.bb
        poses[ex.exemplar_id] = ex.pose
    write_bbox_csv(out / "bboxes.csv", boxes)
    write_pose_csv(out / "index.csv", poses)


def load_exemplars(in_dir) -> list[TrainExemplar]:
    root = Path(in_dir)
    index_path = root / "index.csv"
    if not index_path.exists():
        raise ParseError(f"no index.csv under {root}")
    poses = load_pose_csv(index_path)
    boxes = load_bbox_csv(root / "bboxes.csv")
    exemplars = []
    for ex_id in poses:
        if ex_id not in boxes:
            raise ParseError(f"exemplar {ex_id!r} missing from bbox index")
        shape = load_pts(root / "landmarks" / f"{ex_id}.pts")
        exemplars.append(TrainExemplar(ex_id, shape, boxes[ex_id], poses[ex_id]))
    return exemplars
