"""Binary containers: per-shot feature files and model checkpoints.

Both use the same layout: a single JSON header line, then contiguous
little-endian float32 data. Feature files hold one array; checkpoints hold a
manifest (config plus named tensor table with offsets) followed by all tensor
blobs back to back. Writing is deterministic, so identical tensors produce
byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import SchemaError, ShapeError

__all__ = [
    "write_feature_file",
    "read_feature_file",
    "save_checkpoint",
    "load_checkpoint",
    "file_checksum",
]

_DTYPE = np.dtype("<f4")


def _header_bytes(obj: dict) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n"


def write_feature_file(path: str | Path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype=_DTYPE)
    header = _header_bytes({
        "dtype": "f32",
        "shape": list(arr.shape),
        "byte_order": "little",
    })
    with open(path, "wb") as handle:
        handle.write(header)
        handle.write(arr.tobytes())


def read_feature_file(path: str | Path) -> np.ndarray:
    with open(path, "rb") as handle:
        header_line = handle.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"bad feature file header: {exc}", str(path)) from None
        if header.get("dtype") != "f32" or header.get("byte_order") != "little":
            raise SchemaError("feature files must be little-endian f32", str(path))
        shape = tuple(header["shape"])
        data = handle.read()
    expected = int(np.prod(shape)) * 4
    if len(data) != expected:
        raise ShapeError(f"{path}: expected {expected} payload bytes, found {len(data)}")
    return np.frombuffer(data, dtype=_DTYPE).reshape(shape).copy()


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray],
                    config: dict | None = None) -> None:
    """Write named tensors plus a config snapshot as one checkpoint file."""
    names = sorted(tensors)
    blobs = {n: np.ascontiguousarray(tensors[n], dtype=_DTYPE) for n in names}
    table = []
    offset = 0
    for name in names:
        size = blobs[name].nbytes
        table.append({"name": name, "shape": list(blobs[name].shape),
                      "dtype": "f32", "offset": offset, "size": size})
        offset += size
    header = _header_bytes({
        "format": "s2t-checkpoint-v1",
        "byte_order": "little",
        "config": config or {},
        "tensors": table,
    })
    with open(path, "wb") as handle:
        handle.write(header)
        for name in names:
            handle.write(blobs[name].tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as handle:
        try:
            header = json.loads(handle.readline())
        except json.JSONDecodeError as exc:
            raise SchemaError(f"bad checkpoint header: {exc}", str(path)) from None
        if header.get("format") != "s2t-checkpoint-v1":
            raise SchemaError("not an s2t checkpoint", str(path))
        payload = handle.read()
    tensors = {}
    for entry in header["tensors"]:
        start, size = entry["offset"], entry["size"]
        chunk = payload[start:start + size]
        if len(chunk) != size:
            raise ShapeError(f"{path}: truncated tensor '{entry['name']}'")
        tensors[entry["name"]] = (
            np.frombuffer(chunk, dtype=_DTYPE).reshape(entry["shape"]).copy())
    return header.get("config", {}), tensors


def file_checksum(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
