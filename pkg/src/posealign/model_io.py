"""Versioned binary container for trained models.

Layout: one JSON header line (sorted keys, so byte-identical for equal
content) followed by each array's raw little-endian C-order bytes in header
order.  No timestamps or compression anywhere, which keeps saves
byte-deterministic and load/save round trips bit-exact.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ModelIOError

FORMAT_NAME = "posealign-model"
FORMAT_VERSION = 1


def _canonical(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.dtype.byteorder == ">":
        arr = arr.astype(arr.dtype.newbyteorder("<"))
    if not arr.flags.c_contiguous:
        # guarded because ascontiguousarray would promote 0-d to 1-d
        arr = np.ascontiguousarray(arr)
    return arr


def save_model(path, kind: str, meta: dict, arrays: list[tuple[str, np.ndarray]]) -> None:
    """Write a model file; ``arrays`` order defines the byte layout."""
    entries = []
    blobs = []
    seen = set()
    for name, arr in arrays:
        if name in seen:
            raise ModelIOError(f"duplicate array name {name!r}")
        seen.add(name)
        arr = _canonical(np.asarray(arr))
        if not np.issubdtype(arr.dtype, np.number) and arr.dtype != np.bool_:
            raise ModelIOError(f"array {name!r} has unsupported dtype {arr.dtype}")
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "kind": kind,
        "meta": meta,
        "arrays": entries,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for blob in blobs:
            fh.write(blob)


def load_model(path, expect_kind: str | None = None):
    """Read a model file; returns (meta, dict name -> array)."""
    path = Path(path)
    if not path.exists():
        raise ModelIOError(f"no model file at {path}")
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ModelIOError(f"unreadable model header: {exc}") from None
        if header.get("format") != FORMAT_NAME:
            raise ModelIOError(f"not a {FORMAT_NAME} file: {path}")
        if header.get("version") != FORMAT_VERSION:
            raise ModelIOError(f"unsupported model version {header.get('version')!r}")
        if expect_kind is not None and header.get("kind") != expect_kind:
            raise ModelIOError(
                f"expected a {expect_kind!r} model, found {header.get('kind')!r}")
        arrays: dict[str, np.ndarray] = {}
        for entry in header["arrays"]:
            dtype = np.dtype(entry["dtype"])
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * dtype.itemsize)
            if len(raw) != count * dtype.itemsize:
                raise ModelIOError(f"model file truncated in array {entry['name']!r}")
            arrays[entry["name"]] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
        if fh.read(1):
            raise ModelIOError("trailing bytes after declared arrays")
    return header["meta"], arrays
