"""Initialization quality by head pose: schemes vs the mean-shape baseline.

Generates a seeded train/test pair, builds exemplars with solver-fitted
poses, then scores every scheme's starting shape against ground truth in
normalized error, bucketed by |yaw|.  Optionally loads a trained pose net to
add net-pose columns next to the solver-pose ones.

Usage:
  python scripts/init_scheme_study.py [--pose-net out/pipeline/pose/pose_net.bin]
"""
import argparse
from pathlib import Path

import numpy as np

from posealign.data import SynthConfig, generate_synthetic
from posealign.evaluation import normalized_error
from posealign.geometry import load_mean_face
from posealign.init_schemes import (TrainExemplar, mean_shape_init, random_init,
                                    scheme1_3d_init, scheme2_knn_init)
from posealign.pose_net import load_pose_net, predict_pose_batch

BUCKETS = ((0, 15), (15, 30), (30, 45), (45, 60))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--train-count", type=int, default=1000)
    ap.add_argument("--test-count", type=int, default=400)
    ap.add_argument("--deform-sigma", type=float, default=0.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--pose-net", help="optional pose_net.bin for net-pose columns")
    ap.add_argument("--out-dir", default="out/init_study")
    args = ap.parse_args()

    face3d = load_mean_face()
    train = generate_synthetic(SynthConfig(
        count=args.train_count, seed=args.seed, deform_sigma=args.deform_sigma), face3d)
    test = generate_synthetic(SynthConfig(
        count=args.test_count, seed=args.seed + 1, deform_sigma=args.deform_sigma), face3d)
    exemplars = [TrainExemplar(s.sample_id, s.landmarks, s.bb, s.pose) for s in train]

    net_poses = None
    if args.pose_net:
        net = load_pose_net(args.pose_net)
        net_poses = predict_pose_batch(net, test)

    rng = np.random.default_rng(args.seed)
    columns = {"mean": [], "random1": [], "3d_solver": [], "knn1_solver": []}
    if net_poses is not None:
        columns["3d_net"] = []
        columns["knn1_net"] = []
    yaws = []
    for i, s in enumerate(test):
        yaws.append(abs(s.pose.yaw))
        gt = s.landmarks
        columns["mean"].append(normalized_error(mean_shape_init(exemplars, s.bb), gt))
        rand = random_init(exemplars, s.bb, 1, seed=int(rng.integers(2 ** 31))).shapes[0]
        columns["random1"].append(normalized_error(rand, gt))
        columns["3d_solver"].append(
            normalized_error(scheme1_3d_init(s.pose, s.bb, face3d), gt))
        columns["knn1_solver"].append(normalized_error(
            scheme2_knn_init(s.pose, s.bb, exemplars, k=1).shapes[0], gt))
        if net_poses is not None:
            p = net_poses[i]
            columns["3d_net"].append(
                normalized_error(scheme1_3d_init(p, s.bb, face3d), gt))
            columns["knn1_net"].append(normalized_error(
                scheme2_knn_init(p, s.bb, exemplars, k=1).shapes[0], gt))

    yaws = np.array(yaws)
    names = list(columns)
    header = f"{'|yaw| bucket':>14} {'n':>5} " + " ".join(f"{n:>12}" for n in names)
    print(header)
    rows = ["bucket_lo,bucket_hi,n," + ",".join(names)]
    for lo, hi in BUCKETS:
        mask = (yaws >= lo) & (yaws < hi)
        if not mask.any():
            continue
        means = [float(np.mean(np.array(columns[n])[mask])) for n in names]
        print(f"{f'[{lo},{hi})':>14} {mask.sum():>5} "
              + " ".join(f"{v:12.4f}" for v in means))
        rows.append(f"{lo},{hi},{mask.sum()}," + ",".join(repr(v) for v in means))

    wide = yaws >= 30
    if wide.any():
        mean_err = np.array(columns["mean"])
        for name in names:
            if name == "mean":
                continue
            wins = np.mean(np.array(columns[name])[wide] < mean_err[wide])
            print(f"win rate vs mean-shape init, |yaw|>=30: {name:>12} {wins:.3f}")

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "init_errors_by_yaw.csv").write_text("\n".join(rows) + "\n")
    print(f"wrote {out_dir / 'init_errors_by_yaw.csv'}")


if __name__ == "__main__":
    main()
