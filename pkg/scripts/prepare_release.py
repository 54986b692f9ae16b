"""Build the shipping engine assets under var/release/.

Produces, idempotently:
  var/release/checkpoint/   pretrained denoiser + vocab table (copied from
                            the pretrain cache; trains it if absent)
  var/release/tokens/       one optimized part token per part name, each with
                            a .meta.json recording build time, held-out mIoU,
                            and the checkpoint hash it was trained against
  var/release/engine.json   engine config wiring the above together

Everything is keyed by content: a token whose recorded checkpoint hash no
longer matches the current checkpoint is retrained. The acceptance suite
imports these helpers, so a cold `pytest` run builds the same assets.
"""

from __future__ import annotations

import json
import shutil
import sys
import time
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
if str(REPO / "src") not in sys.path:
    sys.path.insert(0, str(REPO / "src"))

from partlab import tokens as token_mod  # noqa: E402
from partlab import tensor as T  # noqa: E402
from partlab.config import EngineConfig  # noqa: E402
from partlab.container import atomic_write_text  # noqa: E402
from partlab.engine import token_path  # noqa: E402
from partlab.scenes import ALL_PART_NAMES  # noqa: E402
from partlab.training import (  # noqa: E402
    RELEASE_PRETRAIN,
    ensure_pretrained,
    load_pretrained,
)
from partlab.unet import MiniUNet  # noqa: E402

RELEASE_DIR = REPO / "var" / "release"
CHECKPOINT_DIR = RELEASE_DIR / "checkpoint"
TOKEN_DIR = RELEASE_DIR / "tokens"
ENGINE_JSON = RELEASE_DIR / "engine.json"

TOKEN_IMAGES = 20  # training scenes per part token
TOKEN_EVAL_IMAGES = 20  # held-out scenes for the recorded mIoU

CHECKPOINT_FILES = (
    "model.json", "model.json.bin", "vocab.json", "vocab.json.bin",
    "pretrain_report.json",
)


def release_token_config() -> token_mod.TokenTrainConfig:
    """The recipe every shipped token is trained with (library defaults)."""
    return token_mod.TokenTrainConfig()


def ensure_release_checkpoint() -> tuple[MiniUNet, T.Tensor, Path]:
    """Load var/release/checkpoint, materializing it from the cache if needed."""
    if not (CHECKPOINT_DIR / "model.json").exists():
        _, _, cached = ensure_pretrained(RELEASE_PRETRAIN, cache_root=REPO / "var" / "cache")
        CHECKPOINT_DIR.mkdir(parents=True, exist_ok=True)
        for name in CHECKPOINT_FILES:
            if (cached / name).exists():
                shutil.copy2(cached / name, CHECKPOINT_DIR / name)
    net, table = load_pretrained(CHECKPOINT_DIR)
    return net, table, CHECKPOINT_DIR


def _token_meta_path(part: str) -> Path:
    return TOKEN_DIR / f"{part}.meta.json"


def ensure_release_token(
    net: MiniUNet, table: T.Tensor, part: str
) -> tuple[token_mod.PartToken, dict]:
    """Load the shipped token for `part`, training it if absent or stale."""
    path = token_path(TOKEN_DIR, part)
    meta_path = _token_meta_path(part)
    net_hash = net.state_hash()
    if path.exists() and meta_path.exists():
        meta = json.loads(meta_path.read_text())
        if meta.get("net_hash_after") == net_hash:
            return token_mod.PartToken.load(path), meta

    cfg = release_token_config()
    train_set = token_mod.build_token_set(part, TOKEN_IMAGES)
    t0 = time.monotonic()
    token = token_mod.optimize_token(net, train_set, cfg)
    build_seconds = time.monotonic() - t0
    val_set = token_mod.build_eval_set(part, TOKEN_EVAL_IMAGES)
    miou = token_mod.eval_miou(net, token, val_set)
    TOKEN_DIR.mkdir(parents=True, exist_ok=True)
    token.save(path)
    meta = {
        "part": part,
        "config": cfg.describe(),
        "n_images": TOKEN_IMAGES,
        "build_seconds": build_seconds,
        "heldout_miou": miou,
        "net_hash_before": net_hash,
        "net_hash_after": net.state_hash(),
    }
    atomic_write_text(meta_path, json.dumps(meta, indent=1, sort_keys=True))
    return token, meta


def ensure_release_engine_config() -> Path:
    """Write var/release/engine.json pointing at the release assets."""
    config = EngineConfig(
        checkpoint=str(CHECKPOINT_DIR.relative_to(REPO)),
        token_store=str(TOKEN_DIR.relative_to(REPO)),
        output_dir=str((RELEASE_DIR / "out").relative_to(REPO)),
    )
    ENGINE_JSON.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_text(ENGINE_JSON, json.dumps(config.describe(), indent=1, sort_keys=True))
    return ENGINE_JSON


def main() -> None:
    net, table, ckpt = ensure_release_checkpoint()
    print(f"checkpoint {ckpt} (hash {net.state_hash()[:12]})")
    for part in ALL_PART_NAMES:
        token, meta = ensure_release_token(net, table, part)
        print(
            f"  {part:16s} mIoU {meta['heldout_miou']:.3f} "
            f"({meta['build_seconds']:.0f}s, {token.steps} steps)"
        )
    path = ensure_release_engine_config()
    print(f"engine config -> {path}")


if __name__ == "__main__":
    main()
