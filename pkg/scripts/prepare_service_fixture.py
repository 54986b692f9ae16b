"""Build a small self-contained engine root for console contract tests.

Produces, idempotently, under var/fixtures/service/:
  checkpoint/   a tiny reference denoiser + vocab table (seconds to build)
  tokens/       one optimized creature-head token (a short real training run)
  engine.json   engine config with a fast sampler (8 steps) and a deep queue

The console test suite boots `partlab.cli serve` against this root, so the
fixture must exist before `npm test` runs; the suite's global setup invokes
this script. Keyed by content: a token whose recorded net hash no longer
matches the current checkpoint is retrained.
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
if str(REPO / "src") not in sys.path:
    sys.path.insert(0, str(REPO / "src"))

from partlab import text  # noqa: E402
from partlab import tokens as token_mod  # noqa: E402
from partlab.container import atomic_write_text  # noqa: E402
from partlab.engine import token_path  # noqa: E402
from partlab.training import load_pretrained, save_vocab_table  # noqa: E402
from partlab.unet import reference_net  # noqa: E402

FIXTURE_DIR = REPO / "var" / "fixtures" / "service"
CHECKPOINT_DIR = FIXTURE_DIR / "checkpoint"
TOKEN_DIR = FIXTURE_DIR / "tokens"
ENGINE_JSON = FIXTURE_DIR / "engine.json"
META_JSON = FIXTURE_DIR / "fixture.meta.json"

FIXTURE_PART = "creature-head"
TOKEN_STEPS = 150  # a short but real optimization run, not a random embedding
TOKEN_IMAGES = 6
STEPS = 8  # sampler steps: one edit job lands in about a second
GUIDANCE = 2.0
QUEUE_DEPTH = 32  # the contract suite enqueues a payload matrix in one burst


def fixture_token_config() -> token_mod.TokenTrainConfig:
    return token_mod.TokenTrainConfig(steps=TOKEN_STEPS)


def _recipe() -> dict:
    cfg = fixture_token_config()
    return {
        "part": FIXTURE_PART,
        "token_steps": cfg.steps,
        "token_images": TOKEN_IMAGES,
        "steps": STEPS,
        "guidance": GUIDANCE,
        "queue_depth": QUEUE_DEPTH,
    }


def _is_fresh() -> bool:
    needed = [
        CHECKPOINT_DIR / "model.json",
        token_path(TOKEN_DIR, FIXTURE_PART),
        ENGINE_JSON,
        META_JSON,
    ]
    if not all(p.exists() for p in needed):
        return False
    meta = json.loads(META_JSON.read_text())
    if meta.get("recipe") != _recipe():
        return False
    net, _ = load_pretrained(CHECKPOINT_DIR)
    return meta.get("net_hash") == net.state_hash()


def build_fixture() -> Path:
    """Create (or refresh) the fixture root; returns the engine config path."""
    if _is_fresh():
        return ENGINE_JSON

    started = time.time()
    net = reference_net(seed=0, scale=0.05)
    CHECKPOINT_DIR.mkdir(parents=True, exist_ok=True)
    net.save(CHECKPOINT_DIR / "model.json")
    save_vocab_table(CHECKPOINT_DIR / "vocab.json", text.init_embedding_table(3))

    train_set = token_mod.build_token_set(FIXTURE_PART, TOKEN_IMAGES)
    token = token_mod.optimize_token(net, train_set, fixture_token_config())
    token.save(token_path(TOKEN_DIR, FIXTURE_PART))

    atomic_write_text(ENGINE_JSON, json.dumps({
        "checkpoint": str(CHECKPOINT_DIR.relative_to(REPO)),
        "token_store": str(TOKEN_DIR.relative_to(REPO)),
        "output_dir": str((FIXTURE_DIR / "out").relative_to(REPO)),
        "steps": STEPS,
        "guidance": GUIDANCE,
        "queue_depth": QUEUE_DEPTH,
    }, indent=1, sort_keys=True))
    atomic_write_text(META_JSON, json.dumps({
        "recipe": _recipe(),
        "net_hash": net.state_hash(),
        "build_seconds": round(time.time() - started, 1),
    }, indent=1, sort_keys=True))
    return ENGINE_JSON


def main() -> int:
    path = build_fixture()
    print(path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
