"""Blending-mask machinery: normalization, OTSU, band thresholding, and
aggregation of per-layer part-row attention columns into a 32x32 mask."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T

N_BINS = 256
DEFAULT_OMEGA_FACTOR = 1.5


def min_max_norm(m: np.ndarray) -> np.ndarray:
    """Rescale to [0, 1]; a constant map degenerates to all zeros."""
    m = np.asarray(m, dtype=np.float64)
    lo, hi = m.min(), m.max()
    if hi <= lo:
        return np.zeros_like(m)
    return (m - lo) / (hi - lo)


def otsu_threshold(values: np.ndarray) -> tuple[float, bool]:
    """Between-class-variance threshold over a 256-bin histogram of [0, 1].

    Returns (k, degenerate). The split with maximal between-class variance is
    chosen (ties toward the smaller bin index) and k is the center of the
    first bin of the upper class, so that thresholding at k actually realizes
    the chosen partition. Input occupying a single bin is degenerate and
    returns its mean as k.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("otsu_threshold needs a non-empty map")
    if v.min() < 0.0 or v.max() > 1.0:
        raise ValueError(f"map values must lie in [0, 1], got [{v.min()}, {v.max()}]")
    bins = np.minimum((v * N_BINS).astype(np.int64), N_BINS - 1)
    hist = np.bincount(bins, minlength=N_BINS).astype(np.float64)
    if np.count_nonzero(hist) < 2:
        return float(v.mean()), True
    centers = (np.arange(N_BINS) + 0.5) / N_BINS
    w0 = np.cumsum(hist)  # w0[t]: mass of bins <= t (the lower class)
    m0 = np.cumsum(hist * centers)
    total, mu_total = w0[-1], m0[-1]
    w1 = total - w0
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = m0 / w0
        mu1 = (mu_total - m0) / w1
        var_between = w0 * w1 * (mu0 - mu1) ** 2
    var_between = np.where((w0 == 0) | (w1 == 0), -1.0, var_between)
    t = int(np.argmax(var_between))  # first max == smallest bin on ties
    return float(centers[t + 1]), False


def apply_band_threshold(m: np.ndarray, k: float, omega: float) -> np.ndarray:
    """Three-branch map: 1 where m >= omega, m where k/2 <= m < omega, else 0."""
    m = np.asarray(m, dtype=np.float64)
    return np.where(m >= omega, 1.0, np.where(m >= k / 2.0, m, 0.0))


def adaptive_threshold(
    m: np.ndarray, omega_factor: float = DEFAULT_OMEGA_FACTOR
) -> tuple[np.ndarray, float, bool]:
    """OTSU-adaptive band threshold of a normalized map.

    Returns (thresholded map, k, degenerate). Degenerate input yields an
    all-zero mask — the fail-safe that leaves the source untouched.
    """
    k, degenerate = otsu_threshold(m)
    if degenerate:
        return np.zeros_like(np.asarray(m, dtype=np.float64)), k, True
    return apply_band_threshold(m, k, omega_factor * k), k, False


def resize_map(m: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of a 2-D map, same kernel as the network's resampling."""
    h, w = m.shape
    with T.no_grad():
        out = T.resize_bilinear(T.Tensor(m.reshape(1, 1, h, w)), size, size)
    return out.data[0, 0]


def _column_to_square(column: np.ndarray) -> np.ndarray:
    n = column.shape[-1]
    side = int(math.isqrt(n))
    if side * side != n:
        raise ValueError(f"attention column of length {n} is not a square map")
    return np.asarray(column, dtype=np.float64).reshape(side, side)


def sum_resized_maps(
    columns: dict[int, np.ndarray], layers: list[int] | tuple[int, ...], size: int = 32
) -> np.ndarray:
    """Sum of per-layer part-row maps, each resized to size x size (no norm)."""
    total = np.zeros((size, size))
    for layer in layers:
        if layer not in columns:
            raise ValueError(f"missing attention map for layer {layer}")
        total += resize_map(_column_to_square(columns[layer]), size)
    return total


def aggregate_attention_maps(
    columns: dict[int, np.ndarray],
    layers: list[int] | tuple[int, ...] | None = None,
    size: int = 32,
) -> np.ndarray:
    """Per-step blending mask: resize, sum over layers, then min-max once."""
    if layers is None:
        layers = sorted(columns)
    return min_max_norm(sum_resized_maps(columns, layers, size))
