"""Region metrics: PSNR, windowed SSIM, mask IoU, and attribute agreement."""

from __future__ import annotations

import numpy as np

from .text import ATTRIBUTE_TOKENS, COLOR_RGB, TEXTURE_BASE_GRAY, TEXTURE_DIM, TEXTURE_TOKENS

PSNR_CAP = 99.0
SSIM_WINDOW = 7
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _region(a: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    if mask is None:
        return a.reshape(-1, a.shape[-1]) if a.ndim == 3 else a.reshape(-1, 1)
    if not mask.any():
        raise ValueError("empty region mask")
    return a[mask]


def psnr(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio over the masked pixels, capped at 99 dB."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    diff = _region(a, mask) - _region(b, mask)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse))


def _window_view(x: np.ndarray) -> np.ndarray:
    return np.lib.stride_tricks.sliding_window_view(x, (SSIM_WINDOW, SSIM_WINDOW))


def ssim(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Mean SSIM over 7x7 windows lying fully inside the region, channel-averaged."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    if mask is None:
        valid = np.ones(a.shape[:2], dtype=bool)
    else:
        valid = mask
    inside = _window_view(valid).all(axis=(2, 3))
    if not inside.any():
        raise ValueError("no full window fits inside the region")
    scores = []
    for c in range(a.shape[2]):
        wa = _window_view(a[..., c])
        wb = _window_view(b[..., c])
        mu_a = wa.mean(axis=(2, 3))
        mu_b = wb.mean(axis=(2, 3))
        var_a = (wa * wa).mean(axis=(2, 3)) - mu_a * mu_a
        var_b = (wb * wb).mean(axis=(2, 3)) - mu_b * mu_b
        cov = (wa * wb).mean(axis=(2, 3)) - mu_a * mu_b
        num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
        den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
        scores.append(np.mean((num / den)[inside]))
    return float(np.mean(scores))


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two boolean masks (1.0 when both empty)."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


# -- attribute agreement -------------------------------------------------------

_TEXTURE_TONES = np.array(
    [[TEXTURE_BASE_GRAY] * 3, [TEXTURE_BASE_GRAY * TEXTURE_DIM] * 3]
)


def _gradient_stat(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """(mean |dx|, mean |dy|) of the gray image over neighbor pairs inside mask."""
    gray = image.mean(axis=2)
    dx = np.abs(gray[:, 1:] - gray[:, :-1])
    mx = mask[:, 1:] & mask[:, :-1]
    dy = np.abs(gray[1:, :] - gray[:-1, :])
    my = mask[1:, :] & mask[:-1, :]
    ex = dx[mx].mean() if mx.any() else 0.0
    ey = dy[my].mean() if my.any() else 0.0
    return np.array([ex, ey])


def canonical_patch(attribute: str, size: int = 32) -> np.ndarray:
    out = np.empty((size, size, 3))
    if attribute in COLOR_RGB:
        out[:] = COLOR_RGB[attribute]
        return out
    yy, xx = np.mgrid[0:size, 0:size]
    out[:] = TEXTURE_BASE_GRAY
    if attribute == "striped":
        pat = (yy % 3) == 1
    else:  # dotted
        pat = ((yy % 3) == 1) & ((xx % 3) == 1)
    out[pat] *= TEXTURE_DIM
    return out


def _canonical_stats() -> dict[str, np.ndarray]:
    full = np.ones((32, 32), dtype=bool)
    return {a: _gradient_stat(canonical_patch(a), full) for a in ATTRIBUTE_TOKENS}


_CANONICAL_STATS = _canonical_stats()
_COLOR_MATRIX = np.array([COLOR_RGB[c] for c in COLOR_RGB])


_PALETTE_DIAMETER = max(
    float(np.linalg.norm(np.asarray(a) - np.asarray(b)))
    for a in COLOR_RGB.values()
    for b in COLOR_RGB.values()
)


def region_agreement(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> float | None:
    """Pixelwise appearance agreement of two images over a region, in [0, 100].

    The complement of masked_agreement for regions that span several
    appearance tokens: each pixel pair scores by color distance, anchored so
    the widest palette separation maps to 0. Empty mask -> None.
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return None
    d = np.linalg.norm(a[mask] - b[mask], axis=-1)
    return float(np.clip(100.0 * (1.0 - d / _PALETTE_DIAMETER), 0.0, 100.0).mean())


def masked_agreement(image: np.ndarray, mask: np.ndarray, attribute: str) -> float | None:
    """How much the masked region looks like the attribute, in [0, 100].

    Colors: per-pixel distance to the canonical color, anchored so the
    farthest palette color scores 0. Textures: distance between oriented
    gradient-energy statistics, anchored the same way across the attribute
    palette. Empty mask -> None (absent, not zero).
    """
    if attribute not in ATTRIBUTE_TOKENS:
        raise ValueError(f"unknown attribute token {attribute!r}")
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return None
    if attribute in COLOR_RGB:
        target = np.asarray(COLOR_RGB[attribute])
        d_max = np.linalg.norm(_COLOR_MATRIX - target, axis=1).max()
        d = np.linalg.norm(image[mask] - target, axis=1)
        return float(np.clip(100.0 * (1.0 - d / d_max), 0.0, 100.0).mean())
    target_stat = _CANONICAL_STATS[attribute]
    d_max = max(
        np.linalg.norm(stat - target_stat)
        for name, stat in _CANONICAL_STATS.items()
        if name != attribute
    )
    d = np.linalg.norm(_gradient_stat(image, mask) - target_stat)
    return float(np.clip(100.0 * (1.0 - d / d_max), 0.0, 100.0))
