"""Engine configuration: artifact paths, sampler defaults, service settings.

Configs load from JSON files with unknown keys rejected, so a typo in a config
file fails loudly instead of silently falling back to a default. When no path
is given explicitly, the ENGINE_CONFIG environment variable supplies one; with
neither, the built-in defaults apply.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .editor import BINARIZE_MODES
from .tokens import PAD_STRATEGIES

ENGINE_CONFIG_ENV = "ENGINE_CONFIG"


@dataclass(frozen=True)
class EngineConfig:
    checkpoint: str = "var/engine/checkpoint"  # dir holding model.json + vocab.json
    token_store: str = "var/engine/tokens"  # dir of part-token containers
    output_dir: str = "var/engine/out"  # job artifacts land under here
    steps: int = 50  # denoising steps T
    guidance: float = 7.5
    omega_factor: float = 1.5
    t_edit: int | None = None  # blended steps; None means all `steps`
    padding: str = "bg"
    binarize: str = "adaptive"
    workers: int = 1  # executor threads (jobs still run one at a time)
    queue_depth: int = 4
    port: int = 8787

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if not 1 <= self.resolved_t_edit <= self.steps:
            raise ValueError(
                f"t_edit must satisfy 1 <= t_edit <= steps, got "
                f"t_edit={self.t_edit}, steps={self.steps}"
            )
        if self.guidance <= 0:
            raise ValueError(f"guidance must be positive, got {self.guidance}")
        if self.omega_factor < 1.0:
            raise ValueError(f"omega_factor must be >= 1.0, got {self.omega_factor}")
        if self.padding not in PAD_STRATEGIES:
            raise ValueError(f"unknown padding strategy {self.padding!r}")
        if self.binarize not in BINARIZE_MODES:
            raise ValueError(f"unknown binarize mode {self.binarize!r}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if self.queue_depth < 1:
            raise ValueError(f"queue_depth must be >= 1, got {self.queue_depth}")
        if not 1 <= self.port <= 65535:
            raise ValueError(f"port must be in 1..65535, got {self.port}")

    @property
    def resolved_t_edit(self) -> int:
        return self.steps if self.t_edit is None else self.t_edit

    def describe(self) -> dict:
        return asdict(self)


def resolve_config_path(explicit: str | None = None) -> str | None:
    """Explicit path wins; otherwise the ENGINE_CONFIG env var; else None."""
    if explicit:
        return explicit
    return os.environ.get(ENGINE_CONFIG_ENV) or None


def load_engine_config(path: str | Path | None = None) -> EngineConfig:
    """Load a config file (resolved per `resolve_config_path`) or defaults."""
    resolved = resolve_config_path(str(path) if path is not None else None)
    if resolved is None:
        return EngineConfig()
    with open(resolved) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{resolved}: config must be a JSON object")
    known = {f.name for f in fields(EngineConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"{resolved}: unknown config keys {unknown}")
    return EngineConfig(**data)
