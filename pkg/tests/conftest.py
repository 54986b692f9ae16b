"""Session fixtures: a tiny on-disk checkpoint + token store for shell tests.

The net is small (8/16/16 channels) with nudged zero-init tails so attention
maps react to context; tokens are random 2-row embeddings for every part.
None of it is trained — these fixtures exercise plumbing (engine, CLI,
service), not editing quality.
"""

from __future__ import annotations

import json

import numpy as np
import pytest

from partlab import tensor as T
from partlab import text
from partlab.config import load_engine_config
from partlab.scenes import ALL_PART_NAMES
from partlab.tokens import PartToken
from partlab.training import save_vocab_table
from partlab.unet import MiniUNet, reference_net

TINY_STEPS = 8
TINY_GUIDANCE = 2.0


def tiny_net(seed: int = 0, scale: float = 0.05) -> MiniUNet:
    return reference_net(seed=seed, scale=scale)


@pytest.fixture(scope="session")
def engine_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("engine")
    checkpoint = root / "checkpoint"
    tiny_net().save(checkpoint / "model.json")
    save_vocab_table(checkpoint / "vocab.json", text.init_embedding_table(3))
    store = root / "tokens"
    for i, name in enumerate(ALL_PART_NAMES):
        g = np.random.default_rng(100 + i)
        token = PartToken(name=name, rows=T.Tensor(g.normal(size=(2, text.D_EMBED))))
        token.save(store / f"{name}.json")
    (root / "engine.json").write_text(json.dumps({
        "checkpoint": str(checkpoint),
        "token_store": str(store),
        "output_dir": str(root / "out"),
        "steps": TINY_STEPS,
        "guidance": TINY_GUIDANCE,
    }))
    return root


@pytest.fixture(scope="session")
def engine_config(engine_root):
    return load_engine_config(engine_root / "engine.json")


@pytest.fixture(scope="session")
def tiny_engine(engine_config):
    from partlab.engine import Engine

    return Engine(engine_config)
