"""Command-line pipeline: generate data, train models, align, evaluate.

Option precedence is flags over --config JSON over built-in defaults.  Every
subcommand writes a run_config.json recording the resolved options, and all
artifacts are byte-deterministic for a fixed seed: no timestamps, sorted JSON
keys, canonical float formatting.

Exit codes: 0 success, 2 usage errors, 4 numeric aborts, 3 everything that
went wrong with input data or files.  Errors print one line to stderr in the
form ``error[category]: message``.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cascade import CascadeConfig, load_cascade, run_cascade_batch, save_cascade, train_cascade
from .data import (Sample, SynthConfig, annotate_poses, generate_synthetic,
                   load_dataset, load_pts, save_dataset, write_pose_csv, write_pts)
from .errors import (DegenerateInput, DegenerateProjection, EmptyIntersection,
                     ModelIOError, NonFiniteLoss, NonFiniteUpdate,
                     NonOrthonormalInput, ParseError, PoseAlignError,
                     ShapeMismatch, ZeroNormalizer)
from .evaluation import (AlignmentResult, SchemeSpec, build_report,
                         compare_schemes, make_inits, normalized_error,
                         top_error_pose_analysis, write_comparison,
                         write_report, write_top_error_analysis)
from .geometry import BoundingBox, load_mean_face
from .image import GrayImage
from .init_schemes import exemplars_from_samples, load_exemplars, save_exemplars
from .pose_net import (PoseNetArch, TrainConfig, build_pose_training_set,
                       load_pose_net, predict_pose_batch, save_pose_net, train)
from .pose_solver import fit_pose_from_landmarks


class UsageError(ValueError):
    pass


_NUMERIC_ERRORS = (NonFiniteLoss, NonFiniteUpdate, DegenerateInput,
                   DegenerateProjection, NonOrthonormalInput, ZeroNormalizer)
_DATA_ERRORS = (ParseError, ModelIOError, ShapeMismatch, EmptyIntersection,
                OSError)

DEFAULTS: dict[str, dict] = {
    "synth-gen": {
        "count": 200, "image_size": 128, "noise_sigma": 0.02, "deform_sigma": 0.0,
        "pitch_range": "-30,30", "yaw_range": "-60,60", "roll_range": "-30,30",
        "pose_distribution": "uniform", "seed": 0,
    },
    "annotate-pose": {"dataset": None, "seed": 0},
    "train-pose": {
        "dataset": None, "learning_rate": 0.0035, "momentum": 0.9,
        "batch_size": 16, "max_epochs": 80, "patience": 15, "seed": 0,
        "copies": 1, "jitter": 0.05, "val_fraction": 0.1, "dtype": "float32",
    },
    "train-cascade": {
        "dataset": None, "stages": 100, "ferns_per_stage": 10, "fern_depth": 5,
        "pool_size": 400, "shrinkage": 0.1, "augmentations": 20, "seed": 0,
    },
    "align": {
        "dataset": None, "image": None, "bbox": None, "sample_id": "sample",
        "cascade": None, "scheme": "3d", "exemplars": None, "pose_net": None,
        "pose_source": "net", "seed": 0,
    },
    "evaluate": {
        "dataset": None, "pred": None, "threshold": 0.1, "top_n": 50, "seed": 0,
    },
    "compare": {
        "dataset": None, "cascade": None, "exemplars": None,
        "schemes": "random:1,mean,3d,knn:1", "pose_net": None,
        "pose_source": "net", "threshold": 0.1, "seed": 0,
    },
}


def _parse_range(text) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in str(text).split(","))
    except ValueError:
        raise UsageError(f"expected 'lo,hi', got {text!r}") from None
    return lo, hi


def _parse_bbox(text) -> BoundingBox:
    try:
        x, y, w, h = (float(v) for v in str(text).split(","))
        return BoundingBox(x, y, w, h)
    except ValueError:
        raise UsageError(f"expected 'x,y,w,h' with w,h > 0, got {text!r}") from None


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="posealign",
        description="head-pose-guided cascaded face alignment pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int)
        p.add_argument("--config", help="JSON file with option defaults")
        p.add_argument("--out-dir", required=True)

    p = sub.add_parser("synth-gen", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--count", type=int)
    p.add_argument("--image-size", type=int)
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--deform-sigma", type=float)
    p.add_argument("--pitch-range")
    p.add_argument("--yaw-range")
    p.add_argument("--roll-range")
    p.add_argument("--pose-distribution", choices=["uniform", "gaussian"])

    p = sub.add_parser("annotate-pose", help="fit head poses from landmarks")
    common(p)
    p.add_argument("--dataset")

    p = sub.add_parser("train-pose", help="train the pose regression net")
    common(p)
    p.add_argument("--dataset")
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--copies", type=int)
    p.add_argument("--jitter", type=float)
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--dtype", choices=["float32", "float64"])

    p = sub.add_parser("train-cascade", help="train the fern cascade")
    common(p)
    p.add_argument("--dataset")
    p.add_argument("--stages", type=int)
    p.add_argument("--ferns-per-stage", type=int)
    p.add_argument("--fern-depth", type=int)
    p.add_argument("--pool-size", type=int)
    p.add_argument("--shrinkage", type=float)
    p.add_argument("--augmentations", type=int)

    p = sub.add_parser("align", help="align faces with a trained cascade")
    common(p)
    p.add_argument("--dataset")
    p.add_argument("--image", help="single-image mode: npy file of gray pixels")
    p.add_argument("--bbox", help="single-image mode: face box as x,y,w,h")
    p.add_argument("--sample-id")
    p.add_argument("--cascade")
    p.add_argument("--scheme", help="mean | random:n | 3d | knn:k")
    p.add_argument("--exemplars")
    p.add_argument("--pose-net")
    p.add_argument("--pose-source", choices=["net", "solver"])

    p = sub.add_parser("evaluate", help="score predicted landmarks against a dataset")
    common(p)
    p.add_argument("--dataset")
    p.add_argument("--pred", help="directory with <id>.pts predictions")
    p.add_argument("--threshold", type=float)
    p.add_argument("--top-n", type=int)

    p = sub.add_parser("compare", help="compare initialization schemes end to end")
    common(p)
    p.add_argument("--dataset")
    p.add_argument("--cascade")
    p.add_argument("--exemplars")
    p.add_argument("--schemes", help="comma list; first is the baseline")
    p.add_argument("--pose-net")
    p.add_argument("--pose-source", choices=["net", "solver"])
    p.add_argument("--threshold", type=float)

    return parser


def _resolve_options(args: argparse.Namespace) -> dict:
    """flags > config file > defaults; returns the fully resolved table."""
    defaults = dict(DEFAULTS[args.command])
    file_values = {}
    if args.config is not None:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        try:
            file_values = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(file_values, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(file_values) - set(defaults) - {"seed"}
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
    resolved = {}
    for key, default in {**defaults, "seed": defaults.get("seed", 0)}.items():
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            resolved[key] = flag_value
        elif key in file_values:
            resolved[key] = file_values[key]
        else:
            resolved[key] = default
    return resolved


def _write_run_config(out_dir: Path, command: str, options: dict) -> None:
    payload = {
        "subcommand": command,
        "options": options,
        "package_version": __version__,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_config.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _require(options: dict, *keys: str) -> None:
    for key in keys:
        if options.get(key) is None:
            flag = "--" + key.replace("_", "-")
            raise UsageError(f"{flag} is required")


def _load_samples(path_str: str):
    samples, manifest = load_dataset(path_str)
    if not samples:
        raise ParseError(f"dataset at {path_str} has no samples")
    return samples, manifest


def _poses_for(samples, source: str, pose_net_path, needed: bool):
    """sample_id -> HeadPose from the requested source; None when not needed."""
    if not needed:
        return None
    if source == "net":
        if pose_net_path is None:
            raise UsageError("--pose-net is required with --pose-source net")
        net = load_pose_net(pose_net_path)
        predicted = predict_pose_batch(net, samples)
        return {s.sample_id: p for s, p in zip(samples, predicted)}
    face3d = load_mean_face()
    poses = {}
    for s in samples:
        if s.landmarks is None:
            continue
        poses[s.sample_id] = fit_pose_from_landmarks(s.landmarks, face3d).pose
    if not poses:
        raise ParseError("no sample has landmarks to fit poses from; "
                         "use --pose-source net")
    return poses


# ---------------------------------------------------------------------------
# subcommands


def _cmd_synth_gen(options: dict, out_dir: Path) -> int:
    cfg = SynthConfig(
        count=options["count"],
        pitch_range=_parse_range(options["pitch_range"]),
        yaw_range=_parse_range(options["yaw_range"]),
        roll_range=_parse_range(options["roll_range"]),
        image_size=options["image_size"],
        noise_sigma=options["noise_sigma"],
        deform_sigma=options["deform_sigma"],
        seed=options["seed"],
        pose_distribution=options["pose_distribution"],
    )
    samples = generate_synthetic(cfg)
    save_dataset(samples, out_dir, config=cfg)
    print(f"wrote {len(samples)} samples to {out_dir}")
    return 0


def _cmd_annotate_pose(options: dict, out_dir: Path) -> int:
    _require(options, "dataset")
    samples, _ = _load_samples(options["dataset"])
    with_landmarks = [s for s in samples if s.landmarks is not None]
    if not with_landmarks:
        raise ParseError("dataset has no landmarked samples to annotate")
    annotated, skipped = annotate_poses(with_landmarks)
    write_pose_csv(out_dir / "poses.csv",
                   {s.sample_id: s.pose for s in annotated})
    (out_dir / "skipped.json").write_text(
        json.dumps([{"sample_id": sid, "reason": reason} for sid, reason in skipped],
                   indent=2, sort_keys=True) + "\n")
    print(f"annotated {len(annotated)} samples, skipped {len(skipped)}")
    return 0


def _cmd_train_pose(options: dict, out_dir: Path) -> int:
    _require(options, "dataset")
    samples, _ = _load_samples(options["dataset"])
    posed = [s for s in samples if s.pose is not None]
    if len(posed) < 2:
        raise ParseError("dataset needs >= 2 samples with poses; "
                         "run annotate-pose first")
    dataset = build_pose_training_set(
        posed, copies=options["copies"], jitter=options["jitter"],
        seed=options["seed"])
    cfg = TrainConfig(
        learning_rate=options["learning_rate"], momentum=options["momentum"],
        batch_size=options["batch_size"], max_epochs=options["max_epochs"],
        patience=options["patience"], seed=options["seed"])
    net, history = train(dataset, cfg, arch=PoseNetArch(),
                         val_fraction=options["val_fraction"],
                         dtype=np.dtype(options["dtype"]))
    save_pose_net(out_dir / "pose_net.bin", net,
                  extra_meta={"train_config": cfg.to_dict(),
                              "best_epoch": history.best_epoch,
                              "epochs_run": history.epochs_run})
    lines = ["epoch,train_rmse_deg,val_rmse_deg"]
    lines += [f"{i},{tr!r},{va!r}" for i, (tr, va) in
              enumerate(zip(history.train_rmse, history.val_rmse))]
    (out_dir / "learning_curve.csv").write_text("\n".join(lines) + "\n")
    print(f"trained {history.epochs_run} epochs, "
          f"best val RMSE {min(history.val_rmse):.2f} deg at epoch {history.best_epoch}")
    return 0


def _cmd_train_cascade(options: dict, out_dir: Path) -> int:
    _require(options, "dataset")
    samples, _ = _load_samples(options["dataset"])
    landmarked = [s for s in samples if s.landmarks is not None]
    if not landmarked:
        raise ParseError("dataset has no landmarked samples")
    cfg = CascadeConfig(
        stages=options["stages"], ferns_per_stage=options["ferns_per_stage"],
        fern_depth=options["fern_depth"], pool_size=options["pool_size"],
        shrinkage=options["shrinkage"], augmentations=options["augmentations"],
        seed=options["seed"])
    model = train_cascade([(s.image, s.bb, s.landmarks) for s in landmarked], cfg)
    save_cascade(out_dir / "cascade_model.bin", model)
    save_exemplars(exemplars_from_samples(landmarked), out_dir / "exemplars")
    trace = model.metadata["training_trace"]
    lines = ["stage,rms_residual"]
    lines += [f"{i},{v!r}" for i, v in enumerate(trace)]
    (out_dir / "stage_trace.csv").write_text("\n".join(lines) + "\n")
    print(f"trained {cfg.stages} stages; residual {trace[0]:.4f} -> {trace[-1]:.4f}")
    return 0


def _cmd_align(options: dict, out_dir: Path) -> int:
    _require(options, "cascade", "scheme")
    spec = SchemeSpec.parse(options["scheme"])
    model = load_cascade(options["cascade"])

    if options["image"] is not None:
        if options["dataset"] is not None:
            raise UsageError("--image and --dataset are mutually exclusive")
        if options["bbox"] is None:
            raise UsageError("--bbox is required with --image")
        pixels = np.load(options["image"])
        samples = [Sample(options["sample_id"], GrayImage(np.asarray(pixels, dtype=float)),
                          _parse_bbox(options["bbox"]))]
    else:
        _require(options, "dataset")
        samples, _ = _load_samples(options["dataset"])

    exemplars = None
    if spec.kind in ("mean", "random", "knn"):
        if options["exemplars"] is None:
            raise UsageError(f"--exemplars is required for scheme {spec.name!r}")
        exemplars = load_exemplars(options["exemplars"])

    poses = _poses_for(samples, options["pose_source"], options["pose_net"],
                       needed=spec.kind in ("3d", "knn"))
    face3d = load_mean_face()
    seeds = np.random.default_rng(
        np.random.SeedSequence(options["seed"])).integers(0, 2 ** 63, size=len(samples))

    items, kept, skipped = [], [], []
    for sample, sample_seed in zip(samples, seeds):
        pose = poses.get(sample.sample_id) if poses else None
        if poses is not None and pose is None:
            skipped.append({"sample_id": sample.sample_id, "reason": "no pose available"})
            continue
        inits = make_inits(spec, sample.bb, exemplars, pose, face3d, int(sample_seed))
        items.append((sample.image, sample.bb, inits))
        kept.append(sample)
    outputs = run_cascade_batch(model, items)

    landmarks_dir = out_dir / "landmarks"
    landmarks_dir.mkdir(parents=True, exist_ok=True)
    for sample, shape in zip(kept, outputs):
        write_pts(landmarks_dir / f"{sample.sample_id}.pts", shape)
    (out_dir / "align_meta.json").write_text(json.dumps({
        "scheme": spec.name,
        "pose_source": options["pose_source"] if poses is not None else None,
        "aligned": [s.sample_id for s in kept],
        "skipped": skipped,
    }, indent=2, sort_keys=True) + "\n")
    print(f"aligned {len(kept)} samples with scheme {spec.name}"
          + (f", skipped {len(skipped)}" if skipped else ""))
    return 0


def _cmd_evaluate(options: dict, out_dir: Path) -> int:
    _require(options, "dataset", "pred")
    samples, _ = _load_samples(options["dataset"])
    pred_root = Path(options["pred"])
    search_dirs = [pred_root / "landmarks", pred_root]

    results, skipped = [], []
    poses = {}
    for sample in samples:
        if sample.landmarks is None:
            skipped.append({"sample_id": sample.sample_id, "reason": "no ground truth"})
            continue
        pts_path = next((d / f"{sample.sample_id}.pts" for d in search_dirs
                         if (d / f"{sample.sample_id}.pts").exists()), None)
        if pts_path is None:
            skipped.append({"sample_id": sample.sample_id, "reason": "no prediction"})
            continue
        pred = load_pts(pts_path)
        results.append(AlignmentResult(
            sample.sample_id, pred, sample.landmarks,
            normalized_error(pred, sample.landmarks)))
        if sample.pose is not None:
            poses[sample.sample_id] = sample.pose
    if not results:
        raise ParseError("no (prediction, ground truth) pairs to evaluate")

    report = build_report(
        "evaluate", results, poses or None, threshold=options["threshold"],
        metadata={"seed": options["seed"], "n_skipped": len(skipped)})
    write_report(report, out_dir)
    if poses:
        n = min(options["top_n"], len([r for r in results if r.sample_id in poses]))
        with_pose = [r for r in results if r.sample_id in poses]
        records, histogram = top_error_pose_analysis(with_pose, poses, n=n)
        write_top_error_analysis(records, histogram, out_dir)
    (out_dir / "skipped.json").write_text(
        json.dumps(skipped, indent=2, sort_keys=True) + "\n")
    print(f"mean error {report.mean_error:.4f}, "
          f"failures {report.failure_count}/{len(report.results)}")
    return 0


def _cmd_compare(options: dict, out_dir: Path) -> int:
    _require(options, "dataset", "cascade", "exemplars")
    samples, _ = _load_samples(options["dataset"])
    model = load_cascade(options["cascade"])
    exemplars = load_exemplars(options["exemplars"])
    schemes = [token.strip() for token in str(options["schemes"]).split(",") if token.strip()]
    if not schemes:
        raise UsageError("--schemes must list at least one scheme")
    specs = [SchemeSpec.parse(s) for s in schemes]
    needs_pose = any(s.kind in ("3d", "knn") for s in specs)
    poses = _poses_for(samples, options["pose_source"], options["pose_net"],
                       needed=needs_pose)
    comparison = compare_schemes(
        model, samples, specs, exemplars, poses=poses,
        seed=options["seed"], threshold=options["threshold"])
    write_comparison(comparison, out_dir)
    for report in comparison.reports:
        print(f"{report.scheme}: mean error {report.mean_error:.4f}, "
              f"failures {report.failure_count}/{len(report.results)}")
    return 0


_COMMANDS = {
    "synth-gen": _cmd_synth_gen,
    "annotate-pose": _cmd_annotate_pose,
    "train-pose": _cmd_train_pose,
    "train-cascade": _cmd_train_cascade,
    "align": _cmd_align,
    "evaluate": _cmd_evaluate,
    "compare": _cmd_compare,
}


def run(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        options = _resolve_options(args)
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_run_config(out_dir, args.command, options)
        return _COMMANDS[args.command](options, out_dir)
    except UsageError as exc:
        print(f"error[usage]: {exc}", file=sys.stderr)
        return 2
    except _NUMERIC_ERRORS as exc:
        print(f"error[numeric]: {exc}", file=sys.stderr)
        return 4
    except _DATA_ERRORS as exc:
        print(f"error[data]: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error[usage]: {exc}", file=sys.stderr)
        return 2
    except PoseAlignError as exc:
        print(f"error[data]: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
