"""Alignment metrics and scheme comparisons.

Errors are mean landmark distances normalized by the inter-ocular distance
(outer eye corners).  A sample counts as a failure when its normalized error
is strictly greater than the threshold (default 0.1).  Pose-bucketed views
group samples by their largest absolute rotation angle in 5-degree bins.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cascade import CascadeModel, run_cascade_batch
from .errors import ShapeMismatch, ZeroNormalizer
from .geometry import (LEFT_EYE_OUTER, RIGHT_EYE_OUTER, HeadPose, Shape2D,
                       Shape3D, load_mean_face)
from .init_schemes import (InitSet, mean_shape_init, random_init,
                           scheme1_3d_init, scheme2_knn_init)
from .plotting import svg_histogram, svg_line_plot

DEFAULT_FAILURE_THRESHOLD = 0.1
DEFAULT_CED_THRESHOLDS = tuple(np.round(np.linspace(0.0, 0.5, 51), 3))
POSE_BIN_WIDTH = 5.0


def normalized_error(pred: Shape2D, gt: Shape2D,
                     eye_indices: tuple[int, int] = (LEFT_EYE_OUTER, RIGHT_EYE_OUTER)) -> float:
    """Mean landmark distance divided by the ground-truth inter-ocular distance."""
    if pred.k != gt.k:
        raise ShapeMismatch(f"prediction has K={pred.k}, ground truth K={gt.k}")
    left, right = eye_indices
    if not (0 <= left < gt.k and 0 <= right < gt.k):
        raise ValueError(f"eye indices {eye_indices} out of range for K={gt.k}")
    normalizer = float(np.linalg.norm(gt.points[right] - gt.points[left]))
    if normalizer <= 0.0:
        raise ZeroNormalizer("eye-corner landmarks coincide")
    distances = np.linalg.norm(pred.points - gt.points, axis=1)
    return float(np.mean(distances) / normalizer)


@dataclass(frozen=True)
class AlignmentResult:
    sample_id: str
    pred: Shape2D
    gt: Shape2D
    error: float

    def __post_init__(self):
        if not (np.isfinite(self.error) and self.error >= 0.0):
            raise ValueError(f"error must be finite and >= 0, got {self.error}")


def _errors(results) -> np.ndarray:
    return np.array([r.error if isinstance(r, AlignmentResult) else float(r)
                     for r in results], dtype=np.float64)


def failure_rate(results, threshold: float = DEFAULT_FAILURE_THRESHOLD) -> tuple[int, float]:
    """(count, fraction) of results with error strictly above the threshold."""
    errors = _errors(results)
    if errors.size == 0:
        return 0, 0.0
    count = int(np.sum(errors > threshold))
    return count, count / errors.size


def ced_curve(results, thresholds=DEFAULT_CED_THRESHOLDS) -> list[tuple[float, float]]:
    """Cumulative error distribution: fraction of samples with error <= t."""
    errors = _errors(results)
    points = []
    for t in thresholds:
        frac = float(np.mean(errors <= t)) if errors.size else 0.0
        points.append((float(t), frac))
    return points


def max_abs_angle(pose: HeadPose) -> float:
    return float(np.max(np.abs(pose.as_array())))


def pose_histogram(poses, bin_width: float = POSE_BIN_WIDTH):
    """Counts of per-pose max-|angle| in [0, 90] bins; returns (edges, counts)."""
    edges = np.arange(0.0, 90.0 + bin_width, bin_width)
    values = np.array([max_abs_angle(p) for p in poses], dtype=np.float64)
    counts, _ = np.histogram(values, bins=edges)
    return edges, counts


def top_error_pose_analysis(results, poses, n: int = 50,
                            bin_width: float = POSE_BIN_WIDTH):
    """Poses of the n worst samples plus their max-|angle| histogram.

    ``poses`` maps sample_id -> HeadPose.  Selection sorts by error
    descending with ties broken by sample id; returns (records, (edges,
    counts)) where each record carries id, error, the three angles, and the
    max absolute angle.
    """
    results = list(results)
    if n > len(results):
        raise ValueError(f"n={n} exceeds result count {len(results)}")
    ranked = sorted(results, key=lambda r: (-r.error, r.sample_id))[:n]
    records = []
    selected_poses = []
    for r in ranked:
        pose = poses[r.sample_id]
        selected_poses.append(pose)
        records.append({
            "sample_id": r.sample_id,
            "error": r.error,
            "pitch": pose.pitch,
            "yaw": pose.yaw,
            "roll": pose.roll,
            "max_abs_angle": max_abs_angle(pose),
        })
    return records, pose_histogram(selected_poses, bin_width)


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class EvalReport:
    scheme: str
    results: tuple[AlignmentResult, ...]
    mean_error: float
    failure_count: int
    failure_fraction: float
    threshold: float
    ced: tuple[tuple[float, float], ...]
    pose_buckets: tuple[dict, ...]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.failure_count > len(self.results):
            raise ValueError("failure count exceeds sample count")
        fractions = [f for _, f in self.ced]
        if any(b < a - 1e-12 for a, b in zip(fractions, fractions[1:])):
            raise ValueError("CED fractions must be non-decreasing")

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "mean_error": self.mean_error,
            "failure_count": self.failure_count,
            "failure_fraction": self.failure_fraction,
            "threshold": self.threshold,
            "ced": [list(p) for p in self.ced],
            "pose_buckets": list(self.pose_buckets),
            "metadata": self.metadata,
            "per_sample": [
                {"sample_id": r.sample_id, "error": r.error} for r in self.results
            ],
        }


def _pose_buckets(results, poses, bin_width: float = POSE_BIN_WIDTH) -> tuple[dict, ...]:
    if poses is None:
        return ()
    groups: dict[float, list[float]] = {}
    for r in results:
        pose = poses.get(r.sample_id)
        if pose is None:
            continue
        bucket = min(np.floor(max_abs_angle(pose) / bin_width) * bin_width, 90.0 - bin_width)
        groups.setdefault(float(bucket), []).append(r.error)
    return tuple(
        {"bucket_start": start, "count": len(errs), "mean_error": float(np.mean(errs))}
        for start, errs in sorted(groups.items())
    )


def build_report(scheme: str, results, poses=None,
                 threshold: float = DEFAULT_FAILURE_THRESHOLD,
                 ced_thresholds=DEFAULT_CED_THRESHOLDS,
                 metadata: dict | None = None) -> EvalReport:
    results = tuple(results)
    errors = _errors(results)
    count, fraction = failure_rate(results, threshold)
    return EvalReport(
        scheme=scheme,
        results=results,
        mean_error=float(np.mean(errors)) if errors.size else 0.0,
        failure_count=count,
        failure_fraction=fraction,
        threshold=threshold,
        ced=tuple(ced_curve(results, ced_thresholds)),
        pose_buckets=_pose_buckets(results, poses),
        metadata=metadata or {},
    )


# ---------------------------------------------------------------------------
# scheme comparison


@dataclass(frozen=True)
class SchemeSpec:
    """Initialization recipe: mean | random:n | 3d | knn:k."""

    kind: str
    count: int = 1

    def __post_init__(self):
        if self.kind not in ("mean", "random", "3d", "knn"):
            raise ValueError(f"unknown scheme kind {self.kind!r}")
        if self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")
        if self.kind in ("mean", "3d") and self.count != 1:
            raise ValueError(f"{self.kind} produces exactly one initialization")

    @property
    def name(self) -> str:
        if self.kind in ("mean", "3d"):
            return self.kind
        return f"{self.kind}:{self.count}"

    @classmethod
    def parse(cls, text: str) -> "SchemeSpec":
        kind, sep, arg = text.partition(":")
        if not sep:
            return cls(kind)
        try:
            return cls(kind, int(arg))
        except ValueError:
            raise ValueError(f"bad scheme argument in {text!r}") from None


def make_inits(spec: SchemeSpec, bb, exemplars, pose: HeadPose | None,
               face3d: Shape3D, seed: int) -> InitSet:
    """Starting shapes for one sample under the given scheme."""
    if spec.kind == "mean":
        return InitSet(shapes=(mean_shape_init(exemplars, bb),), scheme="mean")
    if spec.kind == "random":
        return random_init(exemplars, bb, n=spec.count, seed=seed)
    if pose is None:
        raise ValueError(f"scheme {spec.name!r} needs a head pose")
    if spec.kind == "3d":
        return InitSet(shapes=(scheme1_3d_init(pose, bb, face3d),), scheme="3d")
    return scheme2_knn_init(pose, bb, exemplars, k=spec.count)


@dataclass(frozen=True)
class ComparisonReport:
    reports: tuple[EvalReport, ...]
    deltas: tuple[dict, ...]
    skipped: tuple[tuple[str, str, str], ...]
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "reports": [r.to_dict() for r in self.reports],
            "deltas": list(self.deltas),
            "skipped": [list(s) for s in self.skipped],
            "metadata": self.metadata,
        }


def compare_schemes(model: CascadeModel, testset, schemes, exemplars,
                    poses=None, face3d: Shape3D | None = None, seed: int = 0,
                    threshold: float = DEFAULT_FAILURE_THRESHOLD) -> ComparisonReport:
    """Run the cascade once per scheme over the testset and compare.

    ``poses`` maps sample_id -> HeadPose for the pose-driven schemes; samples
    without a pose are skipped for those schemes and recorded.  The random
    scheme draws one seed per sample, shared across schemes so paired deltas
    are meaningful.  The first scheme acts as the baseline for deltas.
    """
    schemes = [SchemeSpec.parse(s) if isinstance(s, str) else s for s in schemes]
    if not schemes:
        raise ValueError("need at least one scheme")
    testset = list(testset)
    if face3d is None:
        face3d = load_mean_face()
    sample_seeds = np.random.default_rng(
        np.random.SeedSequence(seed)).integers(0, 2 ** 63, size=len(testset))

    reports = []
    skipped: list[tuple[str, str, str]] = []
    per_scheme_errors: dict[str, dict[str, float]] = {}
    for spec in schemes:
        items = []
        kept = []
        for sample, sample_seed in zip(testset, sample_seeds):
            if sample.landmarks is None:
                skipped.append((sample.sample_id, spec.name, "no ground-truth landmarks"))
                continue
            pose = poses.get(sample.sample_id) if poses else None
            try:
                inits = make_inits(spec, sample.bb, exemplars, pose, face3d,
                                   int(sample_seed))
            except ValueError as exc:
                skipped.append((sample.sample_id, spec.name, str(exc)))
                continue
            items.append((sample.image, sample.bb, inits))
            kept.append(sample)
        outputs = run_cascade_batch(model, items)
        results = [
            AlignmentResult(s.sample_id, out, s.landmarks,
                            normalized_error(out, s.landmarks))
            for s, out in zip(kept, outputs)
        ]
        per_scheme_errors[spec.name] = {r.sample_id: r.error for r in results}
        reports.append(build_report(
            spec.name, results, poses, threshold,
            metadata={"scheme": spec.name, "init_count": spec.count, "seed": seed}))

    base = reports[0]
    base_errors = per_scheme_errors[base.scheme]
    deltas = []
    for report in reports[1:]:
        errors = per_scheme_errors[report.scheme]
        shared = sorted(set(base_errors) & set(errors))
        wins = sum(errors[sid] < base_errors[sid] for sid in shared)
        deltas.append({
            "scheme": report.scheme,
            "baseline": base.scheme,
            "mean_error_delta": report.mean_error - base.mean_error,
            "failure_count_delta": report.failure_count - base.failure_count,
            "paired_samples": len(shared),
            "win_fraction": wins / len(shared) if shared else 0.0,
        })
    metadata = {
        "seed": seed,
        "threshold": threshold,
        "n_samples": len(testset),
        "schemes": [s.name for s in schemes],
    }
    return ComparisonReport(tuple(reports), tuple(deltas), tuple(skipped), metadata)


# ---------------------------------------------------------------------------
# report files


def _write_text(path, text: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _dump_json(path, payload: dict) -> None:
    _write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_report(report: EvalReport, out_dir, stem: str = "report") -> list[str]:
    """JSON + per-sample CSV + CED SVG; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []

    json_path = out_dir / f"{stem}.json"
    _dump_json(json_path, report.to_dict())
    paths.append(str(json_path))

    csv_path = out_dir / f"{stem}_per_sample.csv"
    lines = ["sample_id,error"]
    lines += [f"{r.sample_id},{r.error!r}" for r in report.results]
    _write_text(csv_path, "\n".join(lines) + "\n")
    paths.append(str(csv_path))

    svg_path = out_dir / f"{stem}_ced.svg"
    xs = [p[0] for p in report.ced]
    ys = [p[1] for p in report.ced]
    _write_text(svg_path, svg_line_plot(
        [(report.scheme, xs, ys)], "Cumulative error distribution",
        "normalized error threshold", "fraction of samples", y_range=(0.0, 1.0)))
    paths.append(str(svg_path))
    return paths


def write_comparison(comparison: ComparisonReport, out_dir) -> list[str]:
    """Comparison JSON, per-scheme CSVs, and a combined CED SVG."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []

    json_path = out_dir / "comparison.json"
    _dump_json(json_path, comparison.to_dict())
    paths.append(str(json_path))

    series = []
    for report in comparison.reports:
        stem = "scheme_" + report.scheme.replace(":", "_")
        paths.extend(write_report(report, out_dir, stem=stem))
        series.append((report.scheme, [p[0] for p in report.ced],
                       [p[1] for p in report.ced]))
    svg_path = out_dir / "comparison_ced.svg"
    _write_text(svg_path, svg_line_plot(
        series, "Cumulative error distribution by scheme",
        "normalized error threshold", "fraction of samples", y_range=(0.0, 1.0)))
    paths.append(str(svg_path))
    return paths


def write_top_error_analysis(records, histogram, out_dir) -> list[str]:
    """Worst-sample pose records (JSON + CSV) and the max-|angle| histogram SVG."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    edges, counts = histogram
    paths = []

    json_path = out_dir / "top_error_poses.json"
    _dump_json(json_path, {
        "records": records,
        "histogram": {"edges": [float(e) for e in edges],
                      "counts": [int(c) for c in counts]},
    })
    paths.append(str(json_path))

    csv_path = out_dir / "top_error_poses.csv"
    lines = ["sample_id,error,pitch,yaw,roll,max_abs_angle"]
    lines += [
        f"{r['sample_id']},{r['error']!r},{r['pitch']!r},{r['yaw']!r},"
        f"{r['roll']!r},{r['max_abs_angle']!r}"
        for r in records
    ]
    _write_text(csv_path, "\n".join(lines) + "\n")
    paths.append(str(csv_path))

    svg_path = out_dir / "top_error_hist.svg"
    _write_text(svg_path, svg_histogram(
        edges, counts, "Largest |angle| among worst-aligned samples",
        "max absolute rotation angle (degrees)", "sample count"))
    paths.append(str(svg_path))
    return paths
