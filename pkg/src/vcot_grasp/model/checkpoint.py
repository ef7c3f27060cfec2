"""Checkpoint container: JSON header plus little-endian float64 tensors.

Layout::

    8 bytes   header length N, unsigned little-endian
    N bytes   UTF-8 JSON header {"version", "meta", "tensors": [{name, shape, offset}]}
    ...       tensor payloads, float64 little-endian, row-major

Offsets count from the first byte after the header.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

VERSION = "vcotg-ckpt-1"
_LEN = struct.Struct("<Q")


def save_checkpoint(path, params: dict[str, np.ndarray], meta: dict | None = None) -> Path:
    entries = []
    blobs = []
    offset = 0
    for name in sorted(params):
        arr = np.array(params[name], dtype="<f8", order="C")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"version": VERSION, "meta": meta or {}, "tensors": entries}, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_LEN.pack(len(header)))
        f.write(header)
        for b in blobs:
            f.write(b)
    return path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    (n,) = _LEN.unpack_from(data, 0)
    header = json.loads(data[_LEN.size:_LEN.size + n])
    if header.get("version") != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')!r}")
    base = _LEN.size + n
    params = {}
    for e in header["tensors"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        start = base + e["offset"]
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=start)
        params[e["name"]] = arr.reshape(e["shape"]).astype(np.float64)
    return params, header["meta"]
