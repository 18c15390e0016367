"""Single-file checkpoints: a JSON manifest plus flat float64 arrays.

Byte layout:

    offset 0   : 8-byte magic b"SEGRLCK1"
    offset 8   : uint32 little-endian manifest byte length M
    offset 12  : M bytes of UTF-8 JSON:
                   {"entries": [{"name": str, "shape": [int, ...]}, ...],
                    "meta": <arbitrary JSON>}
    offset 12+M: for each entry, in manifest order, prod(shape) float64
                 values, little-endian, C order

Arrays round-trip bitwise. Scalar counters and RNG states travel in "meta".
"""

from __future__ import annotations

import json
import os
import struct
from typing import Any

import numpy as np

MAGIC = b"SEGRLCK1"


class CheckpointError(RuntimeError):
    pass


def save(path: str, arrays: dict[str, np.ndarray], meta: dict[str, Any] | None = None) -> None:
    entries = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        entries.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.astype("<f8", copy=False).tobytes(order="C"))
    manifest = json.dumps({"entries": entries, "meta": meta or {}},
                          separators=(",", ":")).encode("utf-8")
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(manifest)))
        f.write(manifest)
        for blob in blobs:
            f.write(blob)
    os.replace(tmp, path)


def load(path: str) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:8]!r}")
    (mlen,) = struct.unpack("<I", raw[8:12])
    manifest = json.loads(raw[12:12 + mlen].decode("utf-8"))
    arrays: dict[str, np.ndarray] = {}
    off = 12 + mlen
    for entry in manifest["entries"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        nbytes = n * 8
        chunk = raw[off:off + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"{path}: truncated data for {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        off += nbytes
    return arrays, manifest.get("meta", {})
