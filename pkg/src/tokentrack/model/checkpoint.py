"""Checkpoint container: JSON header + little-endian float32 tensor payloads.

Layout: 4-byte magic, uint32 header length, UTF-8 JSON header, then raw
tensor bytes.  The header holds the model config, free-form metadata and a
manifest of (name, shape, offset) with offsets relative to the payload start.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import DataError
from .config import ModelConfig

MAGIC = b"TTCK"


def save_checkpoint(
    path,
    config: ModelConfig,
    tensors: dict[str, np.ndarray],
    meta: dict | None = None,
) -> None:
    manifest = []
    offset = 0
    payloads = []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payloads.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps(
        {"config": config.to_dict(), "meta": meta or {}, "tensors": manifest}
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for chunk in payloads:
            f.write(chunk)


def load_checkpoint(path) -> tuple[ModelConfig, dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    (header_len,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8 : 8 + header_len].decode("utf-8"))
    payload = data[8 + header_len :]
    config = ModelConfig.from_dict(header["config"])
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=start)
        tensors[entry["name"]] = arr.reshape(shape).astype(np.float32)
    return config, tensors, header.get("meta", {})
