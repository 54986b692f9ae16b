"""Seeded counter-based random streams.

Every stochastic choice in the engine draws from a Philox generator keyed by a
64-bit root seed plus a string label, so any artifact can be regenerated from
its job seed alone.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_key(seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def stream(seed: int, label: str = "") -> np.random.Generator:
    """Independent generator for (seed, label); same pair, same stream."""
    return np.random.Generator(np.random.Philox(key=_label_key(seed, label)))
