"""Tensor container files: a JSON manifest next to one little-endian blob.

The manifest lists {name, dtype, shape} entries in order; the blob is the
concatenation of the row-major float64 payloads in that same order, so offsets
are implied. Checkpoints, part tokens, and trajectory archives all reuse this
format. Writes are atomic (temp file + rename).
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

FORMAT_NAME = "tensor-container"
FORMAT_VERSION = 1


def _atomic_write_bytes(path: Path, payload: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path: str | Path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _atomic_write_bytes(path, payload)


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode())


def save_tensors(path: str | Path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write ``path`` (manifest) and ``path + '.bin'`` (blob)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    chunks = []
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)  # 0-d payloads are stored as shape [1]
        arr = np.ascontiguousarray(arr)
        entries.append({"name": name, "dtype": "f64", "shape": list(arr.shape)})
        chunks.append(arr.tobytes())
    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "blob": path.name + ".bin",
        "tensors": entries,
        "meta": meta or {},
    }
    _atomic_write_bytes(path.with_name(path.name + ".bin"), b"".join(chunks))
    _atomic_write_bytes(path, json.dumps(manifest, indent=1, sort_keys=True).encode())


def load_tensors(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a container; validates format, dtype, and total blob size."""
    path = Path(path)
    with open(path) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != FORMAT_NAME:
        raise ValueError(f"{path}: not a {FORMAT_NAME} manifest")
    if manifest.get("version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported container version {manifest.get('version')!r}")
    blob_path = path.with_name(manifest["blob"])
    flat = np.fromfile(blob_path, dtype="<f8")
    want = 0
    for entry in manifest["tensors"]:
        if entry["dtype"] != "f64":
            raise ValueError(f"{path}: unsupported dtype {entry['dtype']!r} for {entry['name']!r}")
        want += int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
    if flat.size != want:
        raise ValueError(
            f"{blob_path}: blob holds {flat.size} float64 values but the manifest "
            f"implies {want}; the container is truncated or mismatched"
        )
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for entry in manifest["tensors"]:
        n = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
        arrays[entry["name"]] = flat[offset:offset + n].reshape(entry["shape"]).copy()
        offset += n
    return arrays, manifest.get("meta", {})
