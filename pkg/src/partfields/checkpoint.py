"""Checkpoint container format.

Layout: 8-byte magic "PNRFCKPT", little-endian u32 version, u64 metadata
length, UTF-8 JSON metadata (canonical: sorted keys, compact separators),
then raw little-endian tensor payloads in the order metadata declares
(sorted by name). Round-trips are byte-exact.
"""

from __future__ import annotations

import json
import struct

import numpy as np

__all__ = ["CheckpointError", "save_checkpoint", "load_checkpoint", "VERSION", "MAGIC"]

MAGIC = b"PNRFCKPT"
VERSION = 1

_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors, meta):
    """Write named arrays + JSON-serializable metadata to `path`."""
    names = sorted(tensors)
    entries = []
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(tensors[name])
        if arr.dtype == np.float32:
            code = "<f4"
        elif arr.dtype == np.float64:
            code = "<f8"
        else:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
        entries.append(
            {"name": name, "shape": list(arr.shape), "dtype": code, "offset": offset}
        )
        offset += arr.nbytes
    doc = {"meta": meta, "tensors": entries}
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name in names:
            arr = np.ascontiguousarray(tensors[name])
            data = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
            fh.write(data.tobytes())


def load_checkpoint(path):
    """Read back (tensors dict, meta dict); validates magic/version/length."""
    with open(path, "rb") as fh:
        head = fh.read(8)
        if head != MAGIC:
            raise CheckpointError(f"bad magic {head!r} (not a checkpoint file)")
        raw = fh.read(4)
        if len(raw) < 4:
            raise CheckpointError("unexpected EOF reading version")
        (version,) = struct.unpack("<I", raw)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version} (reader is {VERSION})")
        raw = fh.read(8)
        if len(raw) < 8:
            raise CheckpointError("unexpected EOF reading metadata length")
        (meta_len,) = struct.unpack("<Q", raw)
        blob = fh.read(meta_len)
        if len(blob) < meta_len:
            raise CheckpointError("unexpected EOF reading metadata")
        doc = json.loads(blob.decode("utf-8"))
        tensors = {}
        for entry in doc["tensors"]:
            dt = _DTYPES[entry["dtype"]]
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            data = fh.read(count * dt.itemsize)
            if len(data) < count * dt.itemsize:
                raise CheckpointError(f"unexpected EOF reading tensor {entry['name']}")
            tensors[entry["name"]] = np.frombuffer(data, dtype=dt).reshape(entry["shape"]).copy()
    return tensors, doc["meta"]
