import json

import numpy as np
import pytest

from posealign.errors import ModelIOError
from posealign.model_io import FORMAT_NAME, FORMAT_VERSION, load_model, save_model


def sample_arrays(rng):
    return [
        ("weights", rng.normal(size=(3, 4))),
        ("bias", rng.normal(size=4).astype(np.float32)),
        ("counts", np.arange(6, dtype=np.int32).reshape(2, 3)),
        ("ids", np.array([2 ** 40, -5], dtype=np.int64)),
        ("mask", np.array([True, False, True])),
        ("scalar", np.float64(2.5)),
        ("empty", np.zeros((0, 2))),
    ]


class TestRoundTrip:
    def test_meta_and_arrays_survive(self, tmp_path, rng):
        arrays = sample_arrays(rng)
        meta = {"kind_detail": "unit", "nested": {"a": [1, 2]}, "f": 0.125}
        path = tmp_path / "model.bin"
        save_model(path, "test-kind", meta, arrays)
        got_meta, got = load_model(path, expect_kind="test-kind")
        assert got_meta == meta
        assert set(got) == {name for name, _ in arrays}
        for name, arr in arrays:
            arr = np.asarray(arr)
            assert got[name].dtype == arr.dtype
            assert got[name].shape == arr.shape
            assert np.array_equal(got[name], arr)

    def test_save_is_byte_deterministic(self, tmp_path, rng):
        arrays = sample_arrays(rng)
        save_model(tmp_path / "a.bin", "k", {"z": 1, "a": 2}, arrays)
        save_model(tmp_path / "b.bin", "k", {"a": 2, "z": 1}, arrays)
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_save_load_save_is_identity(self, tmp_path, rng):
        arrays = sample_arrays(rng)
        save_model(tmp_path / "a.bin", "k", {"n": 3}, arrays)
        meta, got = load_model(tmp_path / "a.bin")
        save_model(tmp_path / "b.bin", "k", meta, [(n, got[n]) for n, _ in arrays])
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_fortran_order_input_canonicalized(self, tmp_path):
        arr = np.asfortranarray(np.arange(12.0).reshape(3, 4))
        save_model(tmp_path / "m.bin", "k", {}, [("a", arr)])
        _, got = load_model(tmp_path / "m.bin")
        assert np.array_equal(got["a"], arr)

    def test_loaded_arrays_are_writable(self, tmp_path):
        save_model(tmp_path / "m.bin", "k", {}, [("a", np.zeros(3))])
        _, got = load_model(tmp_path / "m.bin")
        got["a"][0] = 1.0  # must not raise


class TestValidation:
    def test_duplicate_name_rejected(self, tmp_path):
        with pytest.raises(ModelIOError):
            save_model(tmp_path / "m.bin", "k", {}, [("a", np.zeros(1)), ("a", np.ones(1))])

    def test_object_dtype_rejected(self, tmp_path):
        with pytest.raises(ModelIOError):
            save_model(tmp_path / "m.bin", "k", {}, [("a", np.array(["x", "y"]))])

    def test_missing_file(self, tmp_path):
        with pytest.raises(ModelIOError):
            load_model(tmp_path / "absent.bin")

    def test_wrong_kind(self, tmp_path):
        save_model(tmp_path / "m.bin", "cascade", {}, [])
        with pytest.raises(ModelIOError, match="cascade"):
            load_model(tmp_path / "m.bin", expect_kind="pose-net")

    def test_kind_not_checked_when_unspecified(self, tmp_path):
        save_model(tmp_path / "m.bin", "anything", {"v": 1}, [])
        meta, arrays = load_model(tmp_path / "m.bin")
        assert meta == {"v": 1} and arrays == {}

    def test_wrong_format_rejected(self, tmp_path):
        path = tmp_path / "m.bin"
        path.write_bytes(json.dumps({"format": "other", "version": 1}).encode() + b"\n")
        with pytest.raises(ModelIOError, match="not a"):
            load_model(path)

    def test_wrong_version_rejected(self, tmp_path):
        path = tmp_path / "m.bin"
        header = {"format": FORMAT_NAME, "version": FORMAT_VERSION + 1,
                  "kind": "k", "meta": {}, "arrays": []}
        path.write_bytes(json.dumps(header).encode() + b"\n")
        with pytest.raises(ModelIOError, match="version"):
            load_model(path)

    def test_garbage_header_rejected(self, tmp_path):
        path = tmp_path / "m.bin"
        path.write_bytes(b"\x00\x01\x02 not json\n")
        with pytest.raises(ModelIOError, match="header"):
            load_model(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "m.bin"
        save_model(path, "k", {}, [("a", np.arange(8.0))])
        data = path.read_bytes()
        path.write_bytes(data[:-4])
        with pytest.raises(ModelIOError, match="truncated"):
            load_model(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "m.bin"
        save_model(path, "k", {}, [("a", np.arange(8.0))])
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(ModelIOError, match="trailing"):
            load_model(path)
