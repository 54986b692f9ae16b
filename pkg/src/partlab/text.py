"""Closed vocabulary and the toy prompt encoder.

Scene prompts use a fixed slot layout inside the 8-token context:

    [<sot>, kind, stance|<pad>, background, attr_1, attr_2, attr_3|<pad>, <pad>]

where attr_i is the appearance token of the kind's i-th part. Editing swaps a
single attr slot, so prompts stay position-stable for the denoiser.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T

PAD, SOT = "<pad>", "<sot>"

COLOR_RGB: dict[str, tuple[float, float, float]] = {
    "red": (0.82, 0.14, 0.14),
    "blue": (0.16, 0.26, 0.82),
    "green": (0.13, 0.62, 0.21),
    "yellow": (0.92, 0.84, 0.12),
    "purple": (0.55, 0.16, 0.70),
    "orange": (0.93, 0.51, 0.10),
    "cyan": (0.10, 0.75, 0.80),
    "pink": (0.95, 0.56, 0.70),
    "golden": (0.85, 0.66, 0.13),
    "white": (0.95, 0.95, 0.93),
    "gray": (0.52, 0.52, 0.54),
    "brown": (0.47, 0.30, 0.17),
    "teal": (0.12, 0.48, 0.46),
    "crimson": (0.65, 0.07, 0.22),
    "olive": (0.45, 0.48, 0.14),
}

TEXTURE_TOKENS = ("striped", "dotted")
TEXTURE_BASE_GRAY = 0.62
TEXTURE_DIM = 0.45  # multiplicative factor inside stripes/dots

BACKGROUND_RGB: dict[str, tuple[float, float, float]] = {
    "sky": (0.53, 0.75, 0.92),
    "grass": (0.36, 0.63, 0.30),
    "sand": (0.86, 0.77, 0.55),
    "dusk": (0.44, 0.36, 0.55),
    "night": (0.13, 0.15, 0.25),
    "fog": (0.78, 0.79, 0.80),
}

KIND_TOKENS = ("creature", "cart", "stool")
STANCE_TOKENS = ("quadruped", "biped")
PART_WORDS = ("head", "body", "legs", "wheels", "seat")

ATTRIBUTE_TOKENS: tuple[str, ...] = tuple(COLOR_RGB) + TEXTURE_TOKENS

VOCAB: tuple[str, ...] = (
    (PAD, SOT)
    + KIND_TOKENS
    + STANCE_TOKENS
    + tuple(BACKGROUND_RGB)
    + ATTRIBUTE_TOKENS
    + PART_WORDS
    + ("with",)
)

TOKEN_ID: dict[str, int] = {tok: i for i, tok in enumerate(VOCAB)}

CONTEXT_LEN = 8
D_EMBED = 64

SLOT_KIND, SLOT_STANCE, SLOT_BG, SLOT_ATTR0 = 1, 2, 3, 4


def token_ids(tokens: list[str]) -> np.ndarray:
    """Map tokens to ids, padding the sequence to the fixed context length."""
    if len(tokens) > CONTEXT_LEN:
        raise ValueError(f"prompt has {len(tokens)} tokens, limit is {CONTEXT_LEN}")
    ids = []
    for tok in tokens:
        if tok not in TOKEN_ID:
            raise ValueError(f"unknown vocabulary token {tok!r}")
        ids.append(TOKEN_ID[tok])
    ids += [TOKEN_ID[PAD]] * (CONTEXT_LEN - len(ids))
    return np.asarray(ids, dtype=np.int64)


def position_encoding(n: int = CONTEXT_LEN, d: int = D_EMBED) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d // 2)[None, :]
    angle = pos / (10000.0 ** (2 * i / d))
    pe = np.empty((n, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return 0.5 * pe


_PE = position_encoding()


def encode_prompt(tokens: list[str], table: T.Tensor) -> T.Tensor:
    """(context_len, d_embed) embedding: table rows plus position encodings."""
    rows = T.gather_rows(table, token_ids(tokens))
    return rows + T.Tensor(_PE)


def encode_prompt_batch(token_lists: list[list[str]], table: T.Tensor) -> T.Tensor:
    """(batch, context_len, d_embed) embeddings for a batch of prompts."""
    ids = np.stack([token_ids(toks) for toks in token_lists])
    rows = T.gather_rows(table, ids.ravel())
    ctx = T.reshape(rows, (len(token_lists), CONTEXT_LEN, D_EMBED))
    return ctx + T.Tensor(_PE[None])


def init_embedding_table(seed: int) -> T.Tensor:
    from . import rng

    g = rng.stream(seed, "embedding-table")
    values = g.normal(scale=0.5, size=(len(VOCAB), D_EMBED))
    return T.Tensor(values, requires_grad=True)


def null_prompt_tokens() -> list[str]:
    """The unconditional context: an empty prompt, i.e. all pad rows."""
    return []
