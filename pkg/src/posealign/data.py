"""Dataset types, pts/CSV/manifest I/O, pose annotation and synthetic faces.

The synthetic generator renders each face as one Gaussian intensity blob per
landmark over a pose-dependent brightness gradient, so both the landmark
constellation and the global shading carry the head pose.  Every sample is
produced from its own child RNG stream, which makes generation order- and
parallelism-independent.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CountMismatch, DegenerateInput, ParseError
from .geometry import (
    BoundingBox,
    HeadPose,
    Shape2D,
    Shape3D,
    load_mean_face,
    project_weak_perspective,
)
from .image import GrayImage
from .pose_solver import fit_pose_from_landmarks

PTS_DECIMALS = 6
BLOB_SIGMA = 2.0
BLOB_AMPLITUDE = 0.45
BG_BASE = 0.45
BG_YAW_GAIN = 0.25
BG_PITCH_GAIN = 0.80
BG_ROLL_GAIN = 0.50
BOX_DILATION = 0.2


@dataclass(frozen=True, eq=False)
class Sample:
    """One dataset record: image, face box, optional landmarks and pose."""

    sample_id: str
    image: GrayImage
    bb: BoundingBox
    landmarks: Shape2D | None = None
    pose: HeadPose | None = None

    def with_pose(self, pose: HeadPose) -> "Sample":
        return dataclasses.replace(self, pose=pose)


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic face generator."""

    count: int
    pitch_range: tuple[float, float] = (-30.0, 30.0)
    yaw_range: tuple[float, float] = (-60.0, 60.0)
    roll_range: tuple[float, float] = (-30.0, 30.0)
    image_size: int = 128
    noise_sigma: float = 0.02
    deform_sigma: float = 0.0
    seed: int = 0
    pose_distribution: str = "uniform"

    def __post_init__(self):
        if self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")
        for name in ("pitch_range", "yaw_range", "roll_range"):
            lo, hi = getattr(self, name)
            if not (-90.0 <= lo <= hi <= 90.0):
                raise ValueError(f"{name}=({lo}, {hi}) must satisfy -90 <= lo <= hi <= 90")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.image_size < 32:
            raise ValueError(f"image_size must be >= 32, got {self.image_size}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.deform_sigma < 0:
            raise ValueError(f"deform_sigma must be >= 0, got {self.deform_sigma}")
        if self.pose_distribution not in ("uniform", "gaussian"):
            raise ValueError(f"unknown pose_distribution {self.pose_distribution!r}")

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "pitch_range": list(self.pitch_range),
            "yaw_range": list(self.yaw_range),
            "roll_range": list(self.roll_range),
            "image_size": self.image_size,
            "noise_sigma": self.noise_sigma,
            "deform_sigma": self.deform_sigma,
            "seed": self.seed,
            "pose_distribution": self.pose_distribution,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        kwargs = dict(d)
        for name in ("pitch_range", "yaw_range", "roll_range"):
            if name in kwargs:
                kwargs[name] = tuple(kwargs[name])
        return cls(**kwargs)


# ---------------------------------------------------------------------------
# pts files


def loads_pts(text: str) -> Shape2D:
    """Parse the standard pts landmark container from a string."""
    lines = text.splitlines()

    def require(idx: int, what: str) -> str:
        if idx >= len(lines):
            raise ParseError(f"unexpected end of file, expected {what}", line=idx + 1)
        return lines[idx].strip()

    head = require(0, "version header")
    if head.replace(" ", "") != "version:1":
        raise ParseError(f"expected 'version: 1', got {head!r}", line=1)
    counts = require(1, "n_points header")
    if not counts.startswith("n_points:"):
        raise ParseError(f"expected 'n_points: <K>', got {counts!r}", line=2)
    try:
        declared = int(counts.split(":", 1)[1])
    except ValueError:
        raise ParseError(f"bad point count in {counts!r}", line=2) from None
    if declared < 2:
        raise ParseError(f"n_points must be >= 2, got {declared}", line=2)
    if require(2, "'{'") != "{":
        raise ParseError("expected '{' opening the point list", line=3)

    points = []
    idx = 3
    while idx < len(lines) and lines[idx].strip() != "}":
        stripped = lines[idx].strip()
        if stripped:
            fields = stripped.split()
            if len(fields) != 2:
                raise ParseError(f"expected 'x y', got {stripped!r}", line=idx + 1)
            try:
                points.append((float(fields[0]), float(fields[1])))
            except ValueError:
                raise ParseError(f"non-numeric coordinate in {stripped!r}", line=idx + 1) from None
        idx += 1
    if idx >= len(lines):
        raise ParseError("missing closing '}'", line=len(lines) + 1)
    if len(points) != declared:
        raise CountMismatch(
            f"n_points declares {declared} but file contains {len(points)}", line=idx + 1)
    return Shape2D(np.array(points))


def dumps_pts(shape: Shape2D) -> str:
    """Canonical pts serialization (6 decimal places)."""
    rows = "\n".join(f"{x:.{PTS_DECIMALS}f} {y:.{PTS_DECIMALS}f}" for x, y in shape.points)
    return f"version: 1\nn_points: {shape.k}\n{{\n{rows}\n}}\n"


def load_pts(path) -> Shape2D:
    return loads_pts(Path(path).read_text())


def write_pts(path, shape: Shape2D) -> None:
    Path(path).write_text(dumps_pts(shape))


# ---------------------------------------------------------------------------
# CSV indexes


def _write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _read_csv(path, header: list[str]):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        got = next(reader, None)
        if got != header:
            raise ParseError(f"expected header {','.join(header)!r}, got {got!r}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
            yield lineno, row


def write_bbox_csv(path, boxes: dict[str, BoundingBox]) -> None:
    _write_csv(path, ["id", "x", "y", "w", "h"],
               ((k, repr(b.x), repr(b.y), repr(b.w), repr(b.h)) for k, b in boxes.items()))


def load_bbox_csv(path) -> dict[str, BoundingBox]:
    out: dict[str, BoundingBox] = {}
    for lineno, row in _read_csv(path, ["id", "x", "y", "w", "h"]):
        try:
            out[row[0]] = BoundingBox(*(float(v) for v in row[1:]))
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
    return out


def write_pose_csv(path, poses: dict[str, HeadPose]) -> None:
    _write_csv(path, ["id", "pitch", "yaw", "roll"],
               ((k, repr(p.pitch), repr(p.yaw), repr(p.roll)) for k, p in poses.items()))


def load_pose_csv(path) -> dict[str, HeadPose]:
    out: dict[str, HeadPose] = {}
    for lineno, row in _read_csv(path, ["id", "pitch", "yaw", "roll"]):
        try:
            out[row[0]] = HeadPose(*(float(v) for v in row[1:]))
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
    return out


# ---------------------------------------------------------------------------
# pose annotation


def annotate_poses(samples, shape3d: Shape3D | None = None):
    """Fill each sample's pose from its landmarks via the closed-form solver.

    Returns (annotated, skipped) where skipped lists (sample_id, reason) for
    samples whose landmarks the solver rejects; those samples are omitted
    from the annotated list.
    """
    if shape3d is None:
        shape3d = load_mean_face()
    annotated: list[Sample] = []
    skipped: list[tuple[str, str]] = []
    for sample in samples:
        if sample.landmarks is None:
            skipped.append((sample.sample_id, "no landmarks"))
            continue
        try:
            fit = fit_pose_from_landmarks(sample.landmarks, shape3d)
        except DegenerateInput as exc:
            skipped.append((sample.sample_id, str(exc)))
            continue
        annotated.append(sample.with_pose(fit.pose))
    return annotated, skipped


def pose_consistency_error(sample: Sample, shape3d: Shape3D) -> float:
    """Max per-angle gap between the stored pose and a fresh solver fit."""
    if sample.landmarks is None or sample.pose is None:
        raise ValueError("sample must carry landmarks and pose")
    fit = fit_pose_from_landmarks(sample.landmarks, shape3d)
    return float(np.abs(fit.pose.as_array() - sample.pose.as_array()).max())


# ---------------------------------------------------------------------------
# synthetic generator


def canonical_box(image_size: int) -> BoundingBox:
    """Face box the generator projects into: centered square, 62.5% of the image."""
    side = 0.625 * image_size
    corner = (image_size - 1) / 2.0 - side / 2.0
    return BoundingBox(corner, corner, side, side)


def tight_box(shape: Shape2D, dilation: float = BOX_DILATION) -> BoundingBox:
    """Axis-aligned landmark bounds dilated by ``dilation`` about the center."""
    lo = shape.points.min(axis=0)
    hi = shape.points.max(axis=0)
    size = (hi - lo) * (1.0 + dilation)
    center = (hi + lo) / 2.0
    return BoundingBox(center[0] - size[0] / 2.0, center[1] - size[1] / 2.0,
                       float(size[0]), float(size[1]))


def _draw_pose(cfg: SynthConfig, rng: np.random.Generator) -> HeadPose:
    bounds = (cfg.pitch_range, cfg.yaw_range, cfg.roll_range)
    angles = []
    for lo, hi in bounds:
        if cfg.pose_distribution == "uniform":
            angles.append(rng.uniform(lo, hi))
        else:
            mean = (lo + hi) / 2.0
            sigma = (hi - lo) / 4.0
            if sigma == 0.0:
                angles.append(mean)
                continue
            v = rng.normal(mean, sigma)
            while not (lo <= v <= hi):
                v = rng.normal(mean, sigma)
            angles.append(v)
    return HeadPose(*angles)


def render_face(landmarks: Shape2D, pose: HeadPose, image_size: int,
                noise_sigma: float = 0.0, rng: np.random.Generator | None = None) -> GrayImage:
    """Render a blob-constellation face with pose-dependent shading."""
    coords = np.arange(image_size, dtype=float)
    lx = landmarks.points[:, 0:1]
    ly = landmarks.points[:, 1:2]
    wx = np.exp(-((coords[None, :] - lx) ** 2) / (2.0 * BLOB_SIGMA ** 2))
    wy = np.exp(-((coords[None, :] - ly) ** 2) / (2.0 * BLOB_SIGMA ** 2))
    blobs = BLOB_AMPLITUDE * (wy.T @ wx)

    half = (image_size - 1) / 2.0
    u = (coords - half) / half
    background = (
        BG_BASE
        + BG_YAW_GAIN * (pose.yaw / 90.0) * u[None, :]
        + BG_PITCH_GAIN * (pose.pitch / 90.0) * u[:, None]
        + BG_ROLL_GAIN * (pose.roll / 90.0) * np.outer(u, u)
    )
    pixels = background + blobs
    if noise_sigma > 0:
        if rng is None:
            raise ValueError("noise_sigma > 0 requires an rng")
        pixels = pixels + rng.normal(0.0, noise_sigma, size=pixels.shape)
    return GrayImage(np.clip(pixels, 0.0, 1.0))


def generate_synthetic(cfg: SynthConfig, shape3d: Shape3D | None = None) -> list[Sample]:
    """Generate ``cfg.count`` fully annotated synthetic samples.

    With deform_sigma > 0 each projected shape gets per-landmark Gaussian
    jitter (sigma = deform_sigma times the projection's width), emulating the
    non-rigid identity/expression variation of real faces; the stored pose is
    then the solver refit so the pose-recomputation invariant still holds.
    """
    if shape3d is None:
        shape3d = load_mean_face()
    proj_box = canonical_box(cfg.image_size)
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.count)
    width = max(5, len(str(cfg.count - 1)))
    samples = []
    for i in range(cfg.count):
        rng = np.random.default_rng(children[i])
        pose = _draw_pose(cfg, rng)
        landmarks = project_weak_perspective(shape3d, pose, proj_box)
        if cfg.deform_sigma > 0.0:
            scale = cfg.deform_sigma * float(np.ptp(landmarks.points[:, 0]))
            landmarks = Shape2D(
                landmarks.points + rng.normal(0.0, scale, size=landmarks.points.shape))
            pose = fit_pose_from_landmarks(landmarks, shape3d).pose
        image = render_face(landmarks, pose, cfg.image_size, cfg.noise_sigma, rng)
        samples.append(Sample(
            sample_id=f"synth-{i:0{width}d}",
            image=image,
            bb=tight_box(landmarks),
            landmarks=landmarks,
            pose=pose,
        ))
    return samples


# ---------------------------------------------------------------------------
# splits


def split(samples, train_fraction: float, seed: int):
    """Seeded disjoint train/test split, stratified by yaw octile.

    Train size is round(train_fraction * n) exactly; per-octile counts are
    assigned by largest remainder so every pose region appears in both
    splits when sizes allow.
    """
    if not 0.0 <= train_fraction <= 1.0:
        raise ValueError(f"train_fraction must be in [0, 1], got {train_fraction}")
    samples = list(samples)
    n = len(samples)
    if n == 0:
        return [], []
    n_train = int(round(train_fraction * n))

    if all(s.pose is not None for s in samples):
        yaws = np.array([s.pose.yaw for s in samples])
        order = np.argsort(yaws, kind="stable")
        octile = np.empty(n, dtype=int)
        octile[order] = (8 * np.arange(n)) // n
    else:
        octile = np.zeros(n, dtype=int)

    strata = [np.flatnonzero(octile == o) for o in range(int(octile.max()) + 1)]
    strata = [s for s in strata if s.size]
    quotas = np.array([train_fraction * s.size for s in strata])
    counts = np.floor(quotas).astype(int)
    shortfall = n_train - counts.sum()
    if shortfall > 0:
        by_frac = np.argsort(-(quotas - counts), kind="stable")
        counts[by_frac[:shortfall]] += 1
    elif shortfall < 0:
        by_frac = np.argsort(quotas - counts, kind="stable")
        counts[by_frac[:-shortfall]] -= 1

    rng = np.random.default_rng(seed)
    train_idx: list[int] = []
    test_idx: list[int] = []
    for stratum, k in zip(strata, counts):
        perm = rng.permutation(stratum.size)
        shuffled = stratum[perm]
        train_idx.extend(shuffled[:k].tolist())
        test_idx.extend(shuffled[k:].tolist())
    return [samples[i] for i in sorted(train_idx)], [samples[i] for i in sorted(test_idx)]


# ---------------------------------------------------------------------------
# dataset directory layout


def save_dataset(samples, out_dir, config: SynthConfig | None = None,
                 extra_meta: dict | None = None) -> None:
    """Write samples as npy images + pts landmarks + CSV indexes + manifest."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    records = []
    boxes: dict[str, BoundingBox] = {}
    poses: dict[str, HeadPose] = {}
    landmarks_dir = out / "landmarks"
    for sample in samples:
        np.save(out / "images" / f"{sample.sample_id}.npy",
                sample.image.pixels.astype(np.float32))
        record = {"id": sample.sample_id, "image": f"images/{sample.sample_id}.npy"}
        boxes[sample.sample_id] = sample.bb
        if sample.landmarks is not None:
            landmarks_dir.mkdir(exist_ok=True)
            write_pts(landmarks_dir / f"{sample.sample_id}.pts", sample.landmarks)
            record["landmarks"] = f"landmarks/{sample.sample_id}.pts"
        if sample.pose is not None:
            poses[sample.sample_id] = sample.pose
        records.append(record)
    write_bbox_csv(out / "bboxes.csv", boxes)
    if poses:
        write_pose_csv(out / "poses.csv", poses)
    manifest = {
        "format_version": 1,
        "config": config.to_dict() if config is not None else None,
        "bboxes": "bboxes.csv",
        "poses": "poses.csv" if poses else None,
        "samples": records,
    }
    if extra_meta:
        manifest["meta"] = extra_meta
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(in_dir):
    """Load a dataset directory; returns (samples, manifest dict)."""
    root = Path(in_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise ParseError(f"no manifest.json under {root}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != 1:
        raise ParseError(f"unsupported dataset format_version {manifest.get('format_version')!r}")
    boxes = load_bbox_csv(root / manifest["bboxes"])
    poses = load_pose_csv(root / manifest["poses"]) if manifest.get("poses") else {}
    samples = []
    for record in manifest["samples"]:
        sid = record["id"]
        pixels = np.load(root / record["image"]).astype(float)
        landmarks = load_pts(root / record["landmarks"]) if record.get("landmarks") else None
        if sid not in boxes:
            raise ParseError(f"sample {sid!r} missing from bbox index")
        samples.append(Sample(
            sample_id=sid,
            image=GrayImage(pixels),
            bb=boxes[sid],
            landmarks=landmarks,
            pose=poses.get(sid),
        ))
    return samples, manifest


def dataset_pose_table(samples) -> str:
    """Poses of all samples as canonical CSV text (diagnostic helper)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["id", "pitch", "yaw", "roll"])
    for s in samples:
        if s.pose is not None:
            writer.writerow([s.sample_id, repr(s.pose.pitch), repr(s.pose.yaw), repr(s.pose.roll)])
    return buf.getvalue()
