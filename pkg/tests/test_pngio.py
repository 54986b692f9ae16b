"""PNG artifact I/O: exact 8-bit round trips, deterministic bytes, atomicity."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from partlab import pngio


def quantized(shape, seed):
    """An array already on the 8-bit grid, so a round trip is exact."""
    g = np.random.default_rng(seed)
    return g.integers(0, 256, size=shape).astype(np.float64) / 255.0


def test_image_roundtrip_exact(tmp_path):
    image = quantized((32, 32, 3), seed=0)
    path = tmp_path / "img.png"
    pngio.write_png(path, image)
    assert np.array_equal(pngio.read_png(path), image)


def test_mask_roundtrip_exact(tmp_path):
    mask = quantized((32, 32), seed=1)
    path = tmp_path / "m.png"
    pngio.write_mask_png(path, mask)
    assert np.array_equal(pngio.read_mask_png(path), mask)


def test_bytes_deterministic():
    image = np.random.default_rng(2).random((32, 32, 3))
    assert pngio.png_bytes(image) == pngio.png_bytes(image.copy())


def test_bytes_roundtrip_from_memory():
    image = quantized((16, 16, 3), seed=3)
    assert np.array_equal(pngio.read_png(pngio.png_bytes(image)), image)


@settings(max_examples=25, deadline=None)
@given(st.floats(min_value=-0.5, max_value=1.5, allow_nan=False))
def test_quantization_clips_and_rounds(value):
    image = np.full((4, 4, 3), value)
    got = pngio.read_png(pngio.png_bytes(image))
    want = np.clip(np.rint(value * 255.0), 0, 255) / 255.0
    assert np.allclose(got, want)


def test_shape_validation():
    with pytest.raises(ValueError, match=r"\(H, W, 3\)"):
        pngio.png_bytes(np.zeros((8, 8)))
    with pytest.raises(ValueError, match=r"\(H, W\)"):
        pngio.mask_png_bytes(np.zeros((8, 8, 3)))


def test_write_is_atomic_and_creates_parents(tmp_path):
    path = tmp_path / "a" / "b" / "img.png"
    pngio.write_png(path, quantized((8, 8, 3), seed=4))
    assert path.exists()
    leftovers = [p for p in path.parent.iterdir() if p.suffix == ".tmp"]
    assert leftovers == []
