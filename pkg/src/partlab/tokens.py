"""Part-localization tokens: 2-row embeddings trained on cross-attention maps.

A part token is a free embedding of two rows — row 0 for the named part, row 1
for everything else — fed to the frozen denoiser as the entire cross-attention
context. Optimization supervises the part row's attention maps with rendered
ground-truth masks (binary cross-entropy, averaged uniformly over every
timestep/layer/pixel term). At inference the two rows are padded to the full
context length; the default pads with copies of the token's own background row.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import container, rng, scenes, text
from . import tensor as T
from .masks import aggregate_attention_maps, otsu_threshold
from .metrics import iou
from .optim import SGD, StepLR
from .schedule import make_schedule, q_sample
from .unet import MiniUNet

log = logging.getLogger(__name__)

TOKEN_KIND = "part-token"
PAD_STRATEGIES = ("bg", "sot", "zero", "eot", "context")
ALL_LAYERS = (0, 1, 2, 3, 4, 5)
DEFAULT_WINDOW = (30, 20)  # (t_start, t_end): intermediate noise levels
TRAIN_SCENE_SEED_BASE = 0  # token-training scene seeds live in [0, 1000)
EVAL_SCENE_SEED_BASE = 5_000  # held-out pool, disjoint from training
BENCHMARK_SEED_RANGE = (10_000, 20_000)  # reserved; training must not touch it

@dataclass
class PartToken:
    """Trained 2-row embedding with the window/layers it was optimized for."""

    name: str
    rows: T.Tensor  # (2, d_embed); row 0 = part, row 1 = background
    layers: tuple[int, ...] = ALL_LAYERS
    t_start: int = DEFAULT_WINDOW[0]
    t_end: int = DEFAULT_WINDOW[1]
    steps: int = 0
    train_count: int = 0
    optimizer: dict = field(default_factory=dict)
    history: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        if not isinstance(self.rows, T.Tensor):
            self.rows = T.Tensor(np.asarray(self.rows, dtype=np.float64))
        if self.rows.shape[0] != 2 or self.rows.data.ndim != 2:
            raise ValueError(f"token rows must be (2, d_embed), got {self.rows.shape}")
        if not np.all(np.isfinite(self.rows.data)):
            raise ValueError("token rows must be finite")
        self.layers = tuple(sorted(int(i) for i in self.layers))
        if not self.layers or not set(self.layers) <= set(ALL_LAYERS):
            raise ValueError(f"layers must be a non-empty subset of {ALL_LAYERS}")
        if not 1 <= self.t_end <= self.t_start:
            raise ValueError(
                f"need 1 <= t_end <= t_start, got [{self.t_start}, {self.t_end}]"
            )

    def save(self, path: str | Path) -> None:
        meta = {
            "kind": TOKEN_KIND,
            "name": self.name,
            "layers": list(self.layers),
            "t_start": self.t_start,
            "t_end": self.t_end,
            "steps": self.steps,
            "train_count": self.train_count,
            "optimizer": self.optimizer,
        }
        container.save_tensors(path, {"rows": self.rows.data}, meta)

    @classmethod
    def load(cls, path: str | Path) -> "PartToken":
        arrays, meta = container.load_tensors(path)
        if meta.get("kind") != TOKEN_KIND:
            raise ValueError(f"{path}: not a {TOKEN_KIND} container (kind={meta.get('kind')!r})")
        return cls(
            name=meta["name"],
            rows=T.Tensor(arrays["rows"]),
            layers=tuple(meta["layers"]),
            t_start=meta["t_start"],
            t_end=meta["t_end"],
            steps=meta["steps"],
            train_count=meta["train_count"],
            optimizer=meta.get("optimizer", {}),
        )


def pad_token_embedding(
    token: PartToken,
    strategy: str = "bg",
    table: T.Tensor | None = None,
    source_embedding: np.ndarray | T.Tensor | None = None,
) -> np.ndarray:
    """Expand the 2-row token to a full (context_len, d_embed) context.

    Rows 0-1 are always the token's own rows; rows 2.. are filled per strategy.
    No position encodings are added: the token rows are free parameters trained
    without them, and the pads only need to be a neutral "everything else".
    """
    if strategy not in PAD_STRATEGIES:
        raise ValueError(f"unknown padding strategy {strategy!r}; choose from {PAD_STRATEGIES}")
    n_pad = text.CONTEXT_LEN - 2
    rows = token.rows.data
    if strategy == "bg":
        pad = np.repeat(rows[1:2], n_pad, axis=0)
    elif strategy == "zero":
        pad = np.zeros((n_pad, rows.shape[1]))
    elif strategy in ("sot", "eot"):
        if table is None:
            raise ValueError(f"{strategy!r} padding needs the vocabulary table")
        # The toy vocabulary has no separate end-of-text mark; every prompt
        # terminates in pad tokens, so "eot" pads with that embedding.
        word = text.SOT if strategy == "sot" else text.PAD
        pad = np.repeat(table.data[text.TOKEN_ID[word]][None], n_pad, axis=0)
    else:  # context
        if source_embedding is None:
            raise ValueError("'context' padding needs a source prompt embedding")
        src = source_embedding.data if isinstance(source_embedding, T.Tensor) else source_embedding
        if src.shape != (text.CONTEXT_LEN, rows.shape[1]):
            raise ValueError(f"source embedding must be {(text.CONTEXT_LEN, rows.shape[1])}")
        pad = np.asarray(src[2:], dtype=np.float64)
    return np.concatenate([rows, pad], axis=0)


# ------------------------------------------------------------ training data

def split_part_name(part_name: str) -> tuple[str, str]:
    kind, _, word = part_name.partition("-")
    if kind not in scenes.PART_SLOTS or word not in scenes.PART_SLOTS[kind]:
        known = [scenes.part_token_name(k, w) for k, ws in scenes.PART_SLOTS.items() for w in ws]
        raise ValueError(f"unknown part name {part_name!r}; known parts: {known}")
    return kind, word


@dataclass
class TokenTrainSet:
    """Scenes with ground-truth masks for one named part, plus resize caches."""

    part: str
    images: np.ndarray  # (N, 3, 32, 32) model-space states
    masks: np.ndarray  # (N, 32, 32) binary {0,1}
    seeds: tuple[int, ...]
    targets: list[dict[int, np.ndarray]]  # per image: map side -> binarized mask

    def __len__(self) -> int:
        return len(self.images)

    def subset(self, n: int) -> "TokenTrainSet":
        if not 1 <= n <= len(self):
            raise ValueError(f"subset size {n} out of range 1..{len(self)}")
        return TokenTrainSet(
            self.part, self.images[:n], self.masks[:n], self.seeds[:n], self.targets[:n]
        )


def _resized_targets(mask: np.ndarray, sides: tuple[int, ...] = (32, 16, 8)) -> dict[int, np.ndarray]:
    """Bilinear-resize the mask to each attention resolution, binarize at 0.5."""
    out = {}
    m = mask.astype(np.float64)
    with T.no_grad():
        for side in sides:
            r = T.resize_bilinear(T.Tensor(m[None, None]), side, side).data[0, 0]
            out[side] = (r >= 0.5).astype(np.float64)
    return out


def build_token_set_from_specs(part_name: str, specs: list[scenes.SceneSpec]) -> TokenTrainSet:
    """Render the given scenes with ground-truth masks for one named part."""
    kind, word = split_part_name(part_name)
    if not specs:
        raise ValueError(f"no scenes given for {part_name!r}")
    bad = sorted({s.kind for s in specs if s.kind != kind})
    if bad:
        raise ValueError(f"{part_name!r} needs {kind!r} scenes, got kinds {bad}")
    images = np.empty((len(specs), 3, scenes.SIZE, scenes.SIZE))
    masks_arr = np.empty((len(specs), scenes.SIZE, scenes.SIZE))
    targets = []
    for i, spec in enumerate(specs):
        scene = scenes.render_scene(spec)
        images[i] = scenes.model_space(scene.image).transpose(2, 0, 1)
        masks_arr[i] = scene.masks[word].astype(np.float64)
        targets.append(_resized_targets(masks_arr[i]))
    return TokenTrainSet(part_name, images, masks_arr, tuple(s.seed for s in specs), targets)


def build_token_set(part_name: str, n_images: int, seed_base: int = TRAIN_SCENE_SEED_BASE) -> TokenTrainSet:
    """Render n_images scenes of the part's kind with ground-truth part masks."""
    kind, word = split_part_name(part_name)
    lo, hi = BENCHMARK_SEED_RANGE
    if any(lo <= seed_base + i < hi for i in range(n_images)):
        raise ValueError(
            f"scene seeds [{seed_base}, {seed_base + n_images}) intersect the "
            f"benchmark range [{lo}, {hi})"
        )
    specs = [scenes.sample_scene_spec(seed_base + i, kind=kind) for i in range(n_images)]
    return build_token_set_from_specs(part_name, specs)


# ------------------------------------------------------------------- loss

def _part_row_map(map_tensor: T.Tensor) -> T.Tensor:
    """(B, HW, n_ctx) attention probabilities -> (B, HW) mass on context row 0."""
    sel = np.zeros((map_tensor.shape[-1], 1))
    sel[0, 0] = 1.0
    col = T.matmul(map_tensor, T.Tensor(sel))
    return T.reshape(col, map_tensor.shape[:2])


def token_loss(
    maps: dict[int, T.Tensor],
    targets: dict[int, np.ndarray],
    layers: tuple[int, ...],
) -> T.Tensor:
    """BCE between part-row maps and resized masks, uniform over all pixel terms."""
    if not layers:
        raise ValueError("token loss needs at least one layer")
    terms = []
    counts = []
    for i in layers:
        if i not in maps:
            raise ValueError(f"missing attention map for layer {i}")
        pred = _part_row_map(maps[i])
        side = int(math.isqrt(pred.shape[-1]))
        if side not in targets:
            raise ValueError(f"no resized mask target for side {side}")
        want = targets[side].reshape(1, -1)
        n = pred.data.size
        terms.append(T.bce_loss(pred, want) * float(n))
        counts.append(n)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / sum(counts))


# ------------------------------------------------------------ optimization

@dataclass(frozen=True)
class TokenTrainConfig:
    steps: int = 2000
    lr: float = 30.0
    lr_step: int = 80
    lr_gamma: float = 0.7
    seed: int = 0
    t_start: int = DEFAULT_WINDOW[0]
    t_end: int = DEFAULT_WINDOW[1]
    layers: tuple[int, ...] = ALL_LAYERS
    T: int = 50
    init_scale: float = 0.5

    def describe(self) -> dict:
        return asdict(self)


def optimize_token(net: MiniUNet, train_set: TokenTrainSet, cfg: TokenTrainConfig) -> PartToken:
    """Gradient descent on the 2-row embedding; the denoiser stays frozen.

    Each step noises one training image to a uniformly random timestep inside
    [t_end, t_start] and backpropagates the attention-map BCE through the full
    (frozen) network into the token rows only.
    """
    if len(train_set) == 0:
        raise ValueError("token training set is empty")
    if not 1 <= cfg.t_end <= cfg.t_start <= cfg.T:
        raise ValueError(f"need 1 <= t_end <= t_start <= T, got {cfg}")
    sched = make_schedule(cfg.T)
    rows = T.Tensor(
        rng.stream(cfg.seed, f"part-token:{train_set.part}:init").normal(
            scale=cfg.init_scale, size=(2, text.D_EMBED)
        ),
        requires_grad=True,
    )
    opt = SGD({"rows": rows}, lr=cfg.lr)
    lr_sched = StepLR(opt, cfg.lr_step, cfg.lr_gamma)

    frozen_flags = {name: p.requires_grad for name, p in net.params.items()}
    for p in net.params.values():
        p.requires_grad = False
    history: list[float] = []
    try:
        for step in range(1, cfg.steps + 1):
            j = int(rng.stream(cfg.seed, f"token-image:{step}").integers(0, len(train_set)))
            t = int(
                rng.stream(cfg.seed, f"token-t:{step}").integers(cfg.t_end, cfg.t_start + 1)
            )
            eps = rng.stream(cfg.seed, f"token-eps:{step}").normal(
                size=train_set.images[j].shape
            )
            x_t = q_sample(train_set.images[j], t, eps, sched)
            ctx = T.reshape(rows, (1, 2, text.D_EMBED))
            _, maps = net.forward(x_t[None], t, ctx, want_maps=True)
            loss = token_loss(maps, train_set.targets[j], cfg.layers)
            loss_val = loss.data.item()
            if not math.isfinite(loss_val):
                raise RuntimeError(
                    f"non-finite token loss at step {step}; config: {json.dumps(cfg.describe())}"
                )
            opt.zero_grad()
            T.backward(loss)
            opt.step()
            lr_sched.step()
            T.clear_tape()
            history.append(loss_val)
            if step % 200 == 0 or step == cfg.steps:
                log.info(
                    "token %s step %d/%d  loss(20)=%.4f  lr=%.3f",
                    train_set.part, step, cfg.steps, float(np.mean(history[-20:])), opt.lr,
                )
    finally:
        for name, p in net.params.items():
            p.requires_grad = frozen_flags[name]
    rows.requires_grad = False
    return PartToken(
        name=train_set.part,
        rows=rows,
        layers=cfg.layers,
        t_start=cfg.t_start,
        t_end=cfg.t_end,
        steps=cfg.steps,
        train_count=len(train_set),
        optimizer={
            "kind": "gd",
            "lr": cfg.lr,
            "lr_step": cfg.lr_step,
            "lr_gamma": cfg.lr_gamma,
            "seed": cfg.seed,
        },
        history=history,
    )


# ------------------------------------------------------------------- eval

def build_eval_set(part_name: str, n_images: int, seed_base: int = EVAL_SCENE_SEED_BASE) -> TokenTrainSet:
    """Held-out scenes for mIoU evaluation (disjoint seed range from training)."""
    return build_token_set(part_name, n_images, seed_base)


def localization_map(
    net: MiniUNet,
    token: PartToken,
    x_t: np.ndarray,
    t: int,
    layers: tuple[int, ...] | None = None,
    strategy: str = "bg",
    table: T.Tensor | None = None,
) -> np.ndarray:
    """Aggregated, normalized part map for one noisy state at one timestep."""
    ctx = pad_token_embedding(token, strategy, table)
    with T.no_grad():
        _, maps = net.forward(x_t[None], t, T.Tensor(ctx[None]), want_maps=True)
    columns = {i: m.data[0, :, 0] for i, m in maps.items()}
    return aggregate_attention_maps(columns, layers if layers is not None else token.layers)

def eval_miou(
    net: MiniUNet,
    token: PartToken,
    val_set: TokenTrainSet,
    ts: list[int] | None = None,
    layers: tuple[int, ...] | None = None,
    strategy: str = "bg",
    table: T.Tensor | None = None,
    T_total: int = 50,
) -> float:
    """Mean IoU of OTSU-binarized aggregated maps against ground truth.

    Averages over every (held-out image, timestep) pair; timesteps default to
    the token's trained window. Noise is seeded per pair for reproducibility.
    """
    sched = make_schedule(T_total)
    if ts is None:
        ts = list(range(token.t_end, token.t_start + 1))
    scores = []
    for idx in range(len(val_set)):
        for t in ts:
            eps = rng.stream(0, f"miou-eps:{val_set.seeds[idx]}:{t}").normal(
                size=val_set.images[idx].shape
            )
            x_t = q_sample(val_set.images[idx], t, eps, sched)
            agg = localization_map(net, token, x_t, t, layers, strategy, table)
            k, degenerate = otsu_threshold(agg)
            pred = np.zeros_like(agg, dtype=bool) if degenerate else agg >= k
            scores.append(iou(pred, val_set.masks[idx] >= 0.5))
    return float(np.mean(scores))


def layer_miou_report(
    net: MiniUNet,
    token: PartToken,
    val_set: TokenTrainSet,
    ts: list[int] | None = None,
    T_total: int = 50,
) -> dict[int, float]:
    """Per-layer localization quality: mIoU of each layer's maps alone."""
    return {
        i: eval_miou(net, token, val_set, ts=ts, layers=(i,), T_total=T_total)
        for i in ALL_LAYERS
    }


def timestep_window_study(
    net: MiniUNet,
    part_name: str,
    windows: list[tuple[int, int]],
    n_train: int = 20,
    n_val: int = 10,
    steps: int = 2000,
    seed: int = 0,
) -> dict:
    """Train one token per window; report inference-time mIoU at every t."""
    train_set = build_token_set(part_name, n_train)
    val_set = build_eval_set(part_name, n_val)
    rows = []
    for w_idx, (t_start, t_end) in enumerate(windows):
        cfg = TokenTrainConfig(
            steps=steps, seed=seed + w_idx, t_start=t_start, t_end=t_end
        )
        token = optimize_token(net, train_set, cfg)
        per_t = [
            eval_miou(net, token, val_set, ts=[t]) for t in range(1, cfg.T + 1)
        ]
        rows.append(per_t)
    table = np.asarray(rows)
    return {"windows": [list(w) for w in windows], "miou_per_t": table}


def sample_count_curve(
    net: MiniUNet,
    part_name: str,
    counts: tuple[int, ...] = (5, 10, 20),
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4),
    steps: int = 2000,
    n_val: int = 10,
) -> dict:
    """mIoU as a function of training-set size, nested subsets per seed.

    Each seed draws one pool of max(counts) scenes; smaller counts use its
    prefix, so curves compare like with like.
    """
    pool = max(counts)
    val_set = build_eval_set(part_name, n_val)
    scores = np.zeros((len(counts), len(seeds)))
    for s_idx, s in enumerate(seeds):
        full = build_token_set(part_name, pool, seed_base=TRAIN_SCENE_SEED_BASE + s * 2 * pool)
        for c_idx, count in enumerate(counts):
            cfg = TokenTrainConfig(steps=steps, seed=s)
            token = optimize_token(net, full.subset(count), cfg)
            scores[c_idx, s_idx] = eval_miou(net, token, val_set)
    return {
        "counts": list(counts),
        "seeds": list(seeds),
        "miou": scores,
        "mean": scores.mean(axis=1),
    }
