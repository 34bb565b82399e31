import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from posealign.cli import run
from posealign.data import load_dataset, load_pts


def tree_digest(root: Path) -> dict:
    out = {}
    for path in sorted(root.rglob("*")):
        if path.is_file():
            out[str(path.relative_to(root))] = hashlib.sha256(path.read_bytes()).hexdigest()
    return out


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """Shared workspace: small dataset, tiny cascade, one align run."""
    root = tmp_path_factory.mktemp("cliws")
    data = root / "data"
    assert run(["synth-gen", "--out-dir", str(data), "--count", "24",
                "--seed", "3"]) == 0
    casc = root / "casc"
    assert run(["train-cascade", "--out-dir", str(casc), "--dataset", str(data),
                "--stages", "2", "--ferns-per-stage", "2", "--fern-depth", "2",
                "--pool-size", "20", "--augmentations", "2", "--seed", "5"]) == 0
    aligned = root / "aligned"
    assert run(["align", "--out-dir", str(aligned), "--dataset", str(data),
                "--cascade", str(casc / "cascade_model.bin"),
                "--scheme", "3d", "--pose-source", "solver", "--seed", "1"]) == 0
    return root


class TestSynthGen:
    def test_outputs_load(self, ws):
        samples, manifest = load_dataset(ws / "data")
        assert len(samples) == 24
        assert all(s.landmarks is not None and s.pose is not None for s in samples)
        assert (ws / "data" / "run_config.json").exists()
        payload = json.loads((ws / "data" / "run_config.json").read_text())
        assert payload["subcommand"] == "synth-gen"
        assert payload["options"]["count"] == 24

    def test_deterministic(self, ws, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for d in (a, b):
            assert run(["synth-gen", "--out-dir", str(d), "--count", "6",
                        "--seed", "11"]) == 0
        assert tree_digest(a) == tree_digest(b)

    def test_deform_sigma_flag(self, tmp_path):
        out = tmp_path / "d"
        assert run(["synth-gen", "--out-dir", str(out), "--count", "3",
                    "--seed", "2", "--deform-sigma", "0.02"]) == 0
        payload = json.loads((out / "run_config.json").read_text())
        assert payload["options"]["deform_sigma"] == 0.02

    def test_config_file_precedence(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"count": 7}))
        out1 = tmp_path / "o1"
        assert run(["synth-gen", "--out-dir", str(out1), "--config", str(cfg),
                    "--seed", "0"]) == 0
        assert len(load_dataset(out1)[0]) == 7
        out2 = tmp_path / "o2"
        assert run(["synth-gen", "--out-dir", str(out2), "--config", str(cfg),
                    "--count", "5", "--seed", "0"]) == 0
        assert len(load_dataset(out2)[0]) == 5  # flag beats config file

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"cuont": 7}))
        assert run(["synth-gen", "--out-dir", str(tmp_path / "o"),
                    "--config", str(cfg)]) == 2


class TestAlign:
    def test_writes_parseable_pts(self, ws):
        samples, _ = load_dataset(ws / "data")
        meta = json.loads((ws / "aligned" / "align_meta.json").read_text())
        assert meta["scheme"] == "3d"
        assert sorted(meta["aligned"]) == sorted(s.sample_id for s in samples)
        for sid in meta["aligned"]:
            shape = load_pts(ws / "aligned" / "landmarks" / f"{sid}.pts")
            assert shape.points.shape == (68, 2)

    def test_deterministic(self, ws, tmp_path):
        digests = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert run(["align", "--out-dir", str(out), "--dataset", str(ws / "data"),
                        "--cascade", str(ws / "casc" / "cascade_model.bin"),
                        "--scheme", "random:2", "--exemplars", str(ws / "casc" / "exemplars"),
                        "--seed", "9"]) == 0
            digests.append(tree_digest(out))
        assert digests[0] == digests[1]

    def test_single_image_mode(self, ws, tmp_path):
        samples, _ = load_dataset(ws / "data")
        npy = tmp_path / "face.npy"
        np.save(npy, samples[0].image.pixels)
        bb = samples[0].bb
        out = tmp_path / "one"
        assert run(["align", "--out-dir", str(out), "--image", str(npy),
                    "--bbox", f"{bb.x},{bb.y},{bb.w},{bb.h}",
                    "--sample-id", "probe",
                    "--cascade", str(ws / "casc" / "cascade_model.bin"),
                    "--scheme", "mean", "--exemplars", str(ws / "casc" / "exemplars"),
                    "--seed", "0"]) == 0
        assert load_pts(out / "landmarks" / "probe.pts").points.shape == (68, 2)

    def test_does_not_mutate_inputs(self, ws, tmp_path):
        before = tree_digest(ws / "data")
        assert run(["align", "--out-dir", str(tmp_path / "o"),
                    "--dataset", str(ws / "data"),
                    "--cascade", str(ws / "casc" / "cascade_model.bin"),
                    "--scheme", "3d", "--pose-source", "solver", "--seed", "1"]) == 0
        assert tree_digest(ws / "data") == before


class TestExitCodes:
    def test_bad_scheme_is_usage_error(self, ws, tmp_path):
        assert run(["align", "--out-dir", str(tmp_path / "o"),
                    "--dataset", str(ws / "data"),
                    "--cascade", str(ws / "casc" / "cascade_model.bin"),
                    "--scheme", "centroid"]) == 2

    def test_image_and_dataset_conflict(self, ws, tmp_path):
        assert run(["align", "--out-dir", str(tmp_path / "o"),
                    "--dataset", str(ws / "data"), "--image", "x.npy",
                    "--cascade", str(ws / "casc" / "cascade_model.bin"),
                    "--scheme", "mean"]) == 2

    def test_net_pose_requires_pose_net(self, ws, tmp_path):
        assert run(["align", "--out-dir", str(tmp_path / "o"),
                    "--dataset", str(ws / "data"),
                    "--cascade", str(ws / "casc" / "cascade_model.bin"),
                    "--scheme", "knn:1", "--exemplars", str(ws / "casc" / "exemplars"),
                    "--pose-source", "net"]) == 2

    def test_missing_dataset_is_data_error(self, ws, tmp_path):
        assert run(["align", "--out-dir", str(tmp_path / "o"),
                    "--dataset", str(tmp_path / "nope"),
                    "--cascade", str(ws / "casc" / "cascade_model.bin"),
                    "--scheme", "3d", "--pose-source", "solver"]) == 3

    @pytest.mark.filterwarnings("ignore:overflow encountered",
                                "ignore:invalid value encountered")
    def test_diverging_train_is_numeric_error(self, ws, tmp_path):
        assert run(["train-pose", "--out-dir", str(tmp_path / "o"),
                    "--dataset", str(ws / "data"), "--learning-rate", "1e9",
                    "--max-epochs", "2", "--batch-size", "8", "--seed", "0"]) == 4

    def test_missing_required_flag(self, ws, tmp_path):
        assert run(["train-cascade", "--out-dir", str(tmp_path / "o")]) == 2


class TestTrainCascadeCli:
    def test_artifacts(self, ws):
        assert (ws / "casc" / "cascade_model.bin").exists()
        assert (ws / "casc" / "exemplars").is_dir()
        trace_lines = (ws / "casc" / "stage_trace.csv").read_text().splitlines()
        assert trace_lines[0] == "stage,rms_residual"
        assert len(trace_lines) == 4  # header + T+1 trace entries

    def test_deterministic(self, ws, tmp_path):
        digests = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert run(["train-cascade", "--out-dir", str(out),
                        "--dataset", str(ws / "data"), "--stages", "2",
                        "--ferns-per-stage", "2", "--fern-depth", "2",
                        "--pool-size", "20", "--augmentations", "2",
                        "--seed", "5"]) == 0
            digests.append(tree_digest(out))
        assert digests[0] == digests[1]


class TestTrainPoseCli:
    def test_artifacts_and_determinism(self, ws, tmp_path):
        digests = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert run(["train-pose", "--out-dir", str(out),
                        "--dataset", str(ws / "data"), "--max-epochs", "2",
                        "--patience", "2", "--batch-size", "8", "--seed", "4"]) == 0
            assert (out / "pose_net.bin").exists()
            curve = (out / "learning_curve.csv").read_text().splitlines()
            assert curve[0] == "epoch,train_rmse_deg,val_rmse_deg"
            assert len(curve) == 3
            digests.append(tree_digest(out))
        assert digests[0] == digests[1]


class TestEvaluateCli:
    def test_report_and_determinism(self, ws, tmp_path):
        digests = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert run(["evaluate", "--out-dir", str(out),
                        "--dataset", str(ws / "data"),
                        "--pred", str(ws / "aligned"), "--seed", "0"]) == 0
            digests.append(tree_digest(out))
        assert digests[0] == digests[1]
        payload = json.loads((tmp_path / "a" / "report.json").read_text())
        assert len(payload["per_sample"]) == 24
        assert (tmp_path / "a" / "top_error_poses.json").exists()

    def test_empty_predictions(self, ws, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        assert run(["evaluate", "--out-dir", str(tmp_path / "o"),
                    "--dataset", str(ws / "data"), "--pred", str(empty)]) == 3


class TestCompareCli:
    def test_reports_and_determinism(self, ws, tmp_path):
        digests = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert run(["compare", "--out-dir", str(out),
                        "--dataset", str(ws / "data"),
                        "--cascade", str(ws / "casc" / "cascade_model.bin"),
                        "--exemplars", str(ws / "casc" / "exemplars"),
                        "--schemes", "mean,3d", "--pose-source", "solver",
                        "--seed", "2"]) == 0
            digests.append(tree_digest(out))
        assert digests[0] == digests[1]
        payload = json.loads((tmp_path / "a" / "comparison.json").read_text())
        assert [r["scheme"] for r in payload["reports"]] == ["mean", "3d"]
        assert payload["deltas"][0]["baseline"] == "mean"
