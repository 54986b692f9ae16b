"""8-bit PNG I/O for engine artifacts.

Inside the package images are float arrays in [0, 1]; this module quantizes to
8 bits at the boundary and writes atomically, so a crashed job never leaves a
partial file behind. Color images are RGB, masks single-channel grayscale.
Encoding is deterministic — the same array always yields the same bytes —
which is what the CLI/HTTP parity contract leans on.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image

from .container import atomic_write_bytes


def _quantize(values: np.ndarray) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    return np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)


def png_bytes(image: np.ndarray) -> bytes:
    """Encode an (H, W, 3) float image in [0, 1] as PNG bytes."""
    arr = _quantize(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {arr.shape}")
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def mask_png_bytes(mask: np.ndarray) -> bytes:
    """Encode an (H, W) float mask in [0, 1] as grayscale PNG bytes."""
    arr = _quantize(mask)
    if arr.ndim != 2:
        raise ValueError(f"expected an (H, W) mask, got shape {arr.shape}")
    buf = io.BytesIO()
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def write_png(path: str | Path, image: np.ndarray) -> None:
    atomic_write_bytes(path, png_bytes(image))


def write_mask_png(path: str | Path, mask: np.ndarray) -> None:
    atomic_write_bytes(path, mask_png_bytes(mask))


def read_png(source: str | Path | bytes) -> np.ndarray:
    """Decode a PNG into an (H, W, 3) float64 image in [0, 1]."""
    raw = io.BytesIO(source) if isinstance(source, (bytes, bytearray)) else source
    with Image.open(raw) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def read_mask_png(source: str | Path | bytes) -> np.ndarray:
    """Decode a grayscale PNG into an (H, W) float64 mask in [0, 1]."""
    raw = io.BytesIO(source) if isinstance(source, (bytes, bytearray)) else source
    with Image.open(raw) as img:
        arr = np.asarray(img.convert("L"), dtype=np.float64)
    return arr / 255.0
