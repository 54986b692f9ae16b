"""Noise schedule for the 50-step toy diffusion process."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ABAR_START = 0.9999
ABAR_END = 0.02


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative signal levels alpha_bar[0..T], with alpha_bar[0] = 1."""

    alpha_bar: np.ndarray

    def __post_init__(self):
        ab = self.alpha_bar
        if ab[0] != 1.0:
            raise ValueError("alpha_bar[0] must be 1 by convention")
        if not np.all(np.diff(ab) < 0):
            raise ValueError("alpha_bar must be strictly decreasing")
        if ab[-1] <= 0 or ab[-1] >= 1:
            raise ValueError("alpha_bar[T] must lie in (0, 1)")

    @property
    def T(self) -> int:
        return len(self.alpha_bar) - 1

    def sigma(self, t: int, eta: float) -> float:
        """DDIM sigma_t; 0 in deterministic mode (eta = 0)."""
        if eta == 0.0:
            return 0.0
        ab_t = self.alpha_bar[t]
        ab_prev = self.alpha_bar[t - 1]
        return float(eta * np.sqrt((1 - ab_prev) / (1 - ab_t)) * np.sqrt(1 - ab_t / ab_prev))


def make_schedule(T: int = 50, kind: str = "linear-abar") -> NoiseSchedule:
    if T < 2:
        raise ValueError("schedule needs T >= 2")
    if kind != "linear-abar":
        raise ValueError(f"unknown schedule kind {kind!r}")
    ab = np.empty(T + 1)
    ab[0] = 1.0
    ab[1:] = np.linspace(ABAR_START, ABAR_END, T)
    return NoiseSchedule(ab)


def q_sample(x0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Noise a clean state to level t: sqrt(ab)*x0 + sqrt(1-ab)*eps."""
    ab = sched.alpha_bar[t]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
