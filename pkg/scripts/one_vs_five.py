"""One pose-guided init vs median-aggregated random inits, across depth.

Loads artifacts produced by run_pipeline.sh (dataset, cascade, exemplars,
pose net), truncates the cascade to several depths, and for each depth
compares: one 3D-projection init (net pose), one random init, and the
per-coordinate median over five random-init runs.

Usage:
  python scripts/one_vs_five.py --pipeline out/pipeline [--depths 30,60,100]
"""
import argparse
from pathlib import Path

import numpy as np

from posealign.cascade import load_cascade, run_cascade, truncate_cascade
from posealign.data import load_dataset
from posealign.evaluation import failure_rate, normalized_error
from posealign.geometry import load_mean_face
from posealign.init_schemes import (InitSet, aggregate_median, load_exemplars,
                                    random_init, scheme1_3d_init)
from posealign.pose_net import load_pose_net, predict_pose_batch


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--pipeline", required=True,
                    help="run_pipeline.sh output root (expects test-data/, cascade/, pose/)")
    ap.add_argument("--depths", default="30,60,100")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", default="out/one_vs_five")
    args = ap.parse_args()

    root = Path(args.pipeline)
    test, _ = load_dataset(root / "test-data")
    model_full = load_cascade(root / "cascade" / "cascade_model.bin")
    exemplars = load_exemplars(root / "cascade" / "exemplars")
    net = load_pose_net(root / "pose" / "pose_net.bin")
    face3d = load_mean_face()
    depths = [int(d) for d in args.depths.split(",")]

    net_poses = predict_pose_batch(net, test)
    rng = np.random.default_rng(args.seed)
    rand_sets = [random_init(exemplars, s.bb, 5, seed=int(rng.integers(2 ** 31)))
                 for s in test]
    guided = [scheme1_3d_init(p, s.bb, face3d) for s, p in zip(test, net_poses)]

    rows = ["depth,mean_guided1,mean_random1,mean_random5_median,"
            "fail_guided1,fail_random1,fail_random5_median"]
    print(f"{'depth':>6} {'guided x1':>10} {'random x1':>10} {'random x5 med':>14}  "
          f"(mean err | failures)")
    for depth in depths:
        model = truncate_cascade(model_full, depth)
        e_guided, e_rand1, e_med5 = [], [], []
        for s, init, rset in zip(test, guided, rand_sets):
            out = run_cascade(model, s.image, s.bb, InitSet((init,), "x"))
            e_guided.append(normalized_error(out, s.landmarks))
            outs = [run_cascade(model, s.image, s.bb, InitSet((sh,), "x"))
                    for sh in rset.shapes]
            e_rand1.append(normalized_error(outs[0], s.landmarks))
            e_med5.append(normalized_error(aggregate_median(outs), s.landmarks))
        f_guided = failure_rate(e_guided)[0]
        f_rand1 = failure_rate(e_rand1)[0]
        f_med5 = failure_rate(e_med5)[0]
        print(f"{depth:>6} {np.mean(e_guided):>7.4f}/{f_guided:<3} "
              f"{np.mean(e_rand1):>7.4f}/{f_rand1:<3} "
              f"{np.mean(e_med5):>10.4f}/{f_med5:<3}")
        rows.append(f"{depth},{np.mean(e_guided)!r},{np.mean(e_rand1)!r},"
                    f"{np.mean(e_med5)!r},{f_guided},{f_rand1},{f_med5}")

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "one_vs_five.csv").write_text("\n".join(rows) + "\n")
    print(f"wrote {out_dir / 'one_vs_five.csv'}")


if __name__ == "__main__":
    main()
