"""Versioned binary checkpoint container.

Layout::

    b"MLCKPT\\0\\0"  magic (8 bytes)
    uint32 LE       format version
    uint64 LE       header length in bytes
    header          UTF-8 JSON: {"config": ..., "tensors": [{name, dtype, shape, offset, nbytes}]}
    blobs           raw little-endian C-order arrays, in header order

Writing is deterministic (sorted JSON keys, no timestamps), so identical
parameters and configs give byte-identical files.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MLCKPT\0\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(tensors: dict[str, np.ndarray], config: dict | None = None) -> bytes:
    index = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        dt = arr.dtype.newbyteorder("<")
        raw = arr.astype(dt, copy=False).tobytes()
        index.append({"name": name, "dtype": dt.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"config": config or {}, "tensors": index}, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<IQ", VERSION, len(header)) + header + b"".join(blobs)


def loads(buf: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if buf[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<IQ", buf[8:20])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(buf[20 : 20 + hlen])
    base = 20 + hlen
    tensors = {}
    for entry in header["tensors"]:
        start = base + entry["offset"]
        raw = buf[start : start + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        tensors[entry["name"]] = arr.astype(arr.dtype.newbyteorder("="))
    return tensors, header["config"]


def save(path, tensors: dict[str, np.ndarray], config: dict | None = None) -> None:
    Path(path).write_bytes(dumps(tensors, config))


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())
