"""Self-describing binary checkpoint container.

Layout::

    CLSUM-CKPT <version>\\n
    <one line of JSON: config, meta, tensor table>\\n
    <raw little-endian float64 payload, tensors back to back in table order>

Every tensor is stored row-major, so a save/load cycle is bit-exact.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = "CLSUM-CKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: dict[str, np.ndarray], config: dict | None = None,
                    meta: dict | None = None) -> Path:
    path = Path(path)
    table = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
    header = {"config": config or {}, "meta": meta or {}, "tensors": table}
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"{MAGIC} {VERSION}\n".encode())
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for arr in tensors.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict, dict]:
    """Return ``(tensors, config, meta)``."""
    with open(path, "rb") as fh:
        first = fh.readline().decode().split()
        if len(first) != 2 or first[0] != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        if int(first[1]) != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {first[1]}")
        header = json.loads(fh.readline())
        payload = np.frombuffer(fh.read(), dtype="<f8")
    tensors = {}
    for entry in header["tensors"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        if start + n > payload.size:
            raise CheckpointError(f"{path}: payload truncated at tensor {entry['name']!r}")
        tensors[entry["name"]] = payload[start:start + n].reshape(entry["shape"]).astype(np.float64)
    return tensors, header["config"], header["meta"]
