"""Denoiser pretraining: noise-prediction MSE with classifier-free dropout.

The denoiser and the vocabulary embedding table are trained jointly; both are
frozen afterwards (part-token optimization never touches them). A fixed
validation set tracks conditional vs unconditional noise MSE so we can tell
that prompts actually steer the model (cond MSE must come out well below the
null-prompt MSE on the same noisy states).
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import container, rng, scenes, text
from . import tensor as T
from .optim import Adam, StepLR, clip_grad_norm
from .schedule import NoiseSchedule, make_schedule
from .unet import MiniUNet, UNetConfig

log = logging.getLogger(__name__)

PRETRAIN_DATA_SEED_BASE = 100_000
VAL_SCENE_SEED_BASE = 5_000
VOCAB_KIND = "vocab-embedding"


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 1600
    batch_size: int = 4
    lr: float = 2e-3
    seed: int = 0
    cfg_dropout: float = 0.1
    n_scenes: int = 512
    val_scenes: int = 24
    val_every: int = 200
    grad_clip: float = 1.0
    lr_decay_every: int = 0  # 0 disables the step decay
    lr_decay_gamma: float = 0.5
    T: int = 50
    channels: tuple[int, int, int] = (16, 32, 64)  # UNet width per level

    def describe(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


@dataclass
class PretrainResult:
    net: MiniUNet
    table: T.Tensor
    history: list[dict]
    val_history: list[dict]

    @property
    def final_val(self) -> dict:
        return self.val_history[-1]


def render_training_set(n_scenes: int, seed_base: int) -> tuple[np.ndarray, list[list[str]]]:
    """n_scenes rendered scenes as model-space NCHW states plus their prompts."""
    images = np.empty((n_scenes, 3, scenes.SIZE, scenes.SIZE))
    prompts: list[list[str]] = []
    for i in range(n_scenes):
        spec = scenes.sample_scene_spec(seed_base + i)
        scene = scenes.render_scene(spec)
        images[i] = scenes.model_space(scene.image).transpose(2, 0, 1)
        prompts.append(spec.prompt_tokens())
    return images, prompts


def _batched_eps_mse(
    net: MiniUNet,
    table: T.Tensor,
    x_t: np.ndarray,
    t_vec: np.ndarray,
    eps: np.ndarray,
    prompts: list[list[str]],
    chunk: int = 8,
) -> float:
    """Mean noise-prediction MSE over fixed (x_t, t, eps) triples, no grad."""
    total = 0.0
    with T.no_grad():
        for lo in range(0, len(t_vec), chunk):
            hi = min(lo + chunk, len(t_vec))
            ctx = text.encode_prompt_batch(prompts[lo:hi], table)
            pred, _ = net.forward(x_t[lo:hi], t_vec[lo:hi], ctx)
            total += float(np.sum((pred.data - eps[lo:hi]) ** 2))
    return total / eps.size


def make_validation_pairs(
    cfg: PretrainConfig, sched: NoiseSchedule
) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[list[str]]]:
    """Held-out scenes noised at a fixed spread of timesteps with fixed noise."""
    images, prompts = render_training_set(cfg.val_scenes, VAL_SCENE_SEED_BASE)
    n = cfg.val_scenes
    t_vec = np.array(
        [1 + round(j * (sched.T - 1) / max(n - 1, 1)) for j in range(n)], dtype=np.int64
    )
    eps = np.stack(
        [rng.stream(cfg.seed, f"val-eps:{j}").normal(size=images[0].shape) for j in range(n)]
    )
    ab = sched.alpha_bar[t_vec][:, None, None, None]
    x_t = np.sqrt(ab) * images + np.sqrt(1.0 - ab) * eps
    return x_t, t_vec, eps, prompts


def validate(net: MiniUNet, table: T.Tensor, pairs) -> dict:
    """Conditional and null-prompt noise MSE on the same noisy states."""
    x_t, t_vec, eps, prompts = pairs
    null = [text.null_prompt_tokens()] * len(prompts)
    return {
        "val_cond_mse": _batched_eps_mse(net, table, x_t, t_vec, eps, prompts),
        "val_uncond_mse": _batched_eps_mse(net, table, x_t, t_vec, eps, null),
    }


def pretrain(cfg: PretrainConfig, net: MiniUNet | None = None) -> PretrainResult:
    """Train the denoiser (and vocab table) from scratch; deterministic in cfg.seed."""
    sched = make_schedule(cfg.T)
    net = net or MiniUNet.init(UNetConfig(channels=tuple(cfg.channels)), seed=cfg.seed)
    table = text.init_embedding_table(cfg.seed)
    images, prompts = render_training_set(cfg.n_scenes, PRETRAIN_DATA_SEED_BASE)
    val_pairs = make_validation_pairs(cfg, sched)

    params = dict(net.params)
    params["vocab.table"] = table
    opt = Adam(params, lr=cfg.lr)
    scheduler = (
        StepLR(opt, cfg.lr_decay_every, cfg.lr_decay_gamma) if cfg.lr_decay_every else None
    )

    history: list[dict] = []
    val_history: list[dict] = []
    null_tokens = text.null_prompt_tokens()
    for step in range(1, cfg.steps + 1):
        idx = rng.stream(cfg.seed, f"batch:{step}").integers(0, cfg.n_scenes, size=cfg.batch_size)
        t_vec = rng.stream(cfg.seed, f"t:{step}").integers(1, cfg.T + 1, size=cfg.batch_size)
        eps = rng.stream(cfg.seed, f"eps:{step}").normal(
            size=(cfg.batch_size, *images[0].shape)
        )
        drop = rng.stream(cfg.seed, f"cfg-dropout:{step}").uniform(size=cfg.batch_size)
        batch_prompts = [
            null_tokens if drop[j] < cfg.cfg_dropout else prompts[idx[j]]
            for j in range(cfg.batch_size)
        ]
        ab = sched.alpha_bar[t_vec][:, None, None, None]
        x_t = np.sqrt(ab) * images[idx] + np.sqrt(1.0 - ab) * eps

        ctx = text.encode_prompt_batch(batch_prompts, table)
        pred, _ = net.forward(x_t, t_vec, ctx)
        loss = T.mse_loss(pred, eps)
        loss_val = loss.data.item()
        if not math.isfinite(loss_val):
            raise RuntimeError(
                f"non-finite training loss at step {step} (seed {cfg.seed}); "
                "lower the learning rate or change the seed"
            )
        opt.zero_grad()
        T.backward(loss)
        clip_grad_norm(params, cfg.grad_clip)
        opt.step()
        if scheduler is not None:
            scheduler.step()
        T.clear_tape()
        history.append({"step": step, "loss": loss_val})

        if step % cfg.val_every == 0 or step == cfg.steps:
            entry = {"step": step, **validate(net, table, val_pairs)}
            val_history.append(entry)
            recent = smoothed_tail(history, window=50)
            log.info(
                "step %d/%d  loss(50)=%.4f  val cond=%.4f uncond=%.4f",
                step, cfg.steps, recent, entry["val_cond_mse"], entry["val_uncond_mse"],
            )
    return PretrainResult(net, table, history, val_history)


def smoothed_tail(history: list[dict], window: int) -> float:
    """Mean loss over the trailing window of step records."""
    tail = history[-window:]
    return float(np.mean([h["loss"] for h in tail]))


def smoothed_series(history: list[dict], window: int) -> np.ndarray:
    """Non-overlapping windowed means of the loss curve, for trend checks."""
    losses = np.array([h["loss"] for h in history])
    n = (len(losses) // window) * window
    return losses[:n].reshape(-1, window).mean(axis=1)


def save_vocab_table(path: str | Path, table: T.Tensor) -> None:
    container.save_tensors(path, {"table": table.data}, {"kind": VOCAB_KIND})


def load_vocab_table(path: str | Path) -> T.Tensor:
    arrays, meta = container.load_tensors(path)
    if meta.get("kind") != VOCAB_KIND:
        raise ValueError(f"{path}: not a {VOCAB_KIND} container (kind={meta.get('kind')!r})")
    table = arrays["table"]
    if table.shape != (len(text.VOCAB), text.D_EMBED):
        raise ValueError(f"{path}: vocab table has shape {table.shape}")
    return T.Tensor(table)


def save_pretrained(out_dir: str | Path, result: PretrainResult, cfg: PretrainConfig) -> None:
    """Write model.json/.bin, vocab.json/.bin, and a training report."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.net.save(out / "model.json")
    save_vocab_table(out / "vocab.json", result.table)
    report = {
        "config": cfg.describe(),
        "val_history": result.val_history,
        "loss_windows": smoothed_series(result.history, window=100).tolist(),
        "final_loss": smoothed_tail(result.history, window=100),
        "model_hash": result.net.state_hash(),
    }
    container.atomic_write_text(out / "pretrain_report.json", _dumps(report))


def load_pretrained(model_dir: str | Path) -> tuple[MiniUNet, T.Tensor]:
    model_dir = Path(model_dir)
    net = MiniUNet.load(model_dir / "model.json")
    table = load_vocab_table(model_dir / "vocab.json")
    return net, table


# The shipping checkpoint: wide enough that part geometry survives into the
# decoder attention queries, trained long past the loss plateau so the
# cross-attention columns sharpen. `partlab pretrain` reproduces it.
RELEASE_PRETRAIN = PretrainConfig(
    steps=9000, batch_size=6, lr_decay_every=3000, n_scenes=2048, channels=(32, 64, 128)
)
DEFAULT_PRETRAIN = RELEASE_PRETRAIN


def config_hash(cfg: PretrainConfig) -> str:
    import hashlib

    return hashlib.sha256(_dumps(cfg.describe()).encode()).hexdigest()[:12]


def ensure_pretrained(
    cfg: PretrainConfig, cache_root: str | Path = "var/cache"
) -> tuple[MiniUNet, T.Tensor, Path]:
    """Load the cached checkpoint for this config, or train and cache it."""
    out = Path(cache_root) / "pretrain" / config_hash(cfg)
    if (out / "model.json").exists() and (out / "vocab.json").exists():
        net, table = load_pretrained(out)
        return net, table, out
    log.info("no cached checkpoint under %s; pretraining from scratch", out)
    result = pretrain(cfg)
    save_pretrained(out, result, cfg)
    return result.net, result.table, out


def _dumps(obj) -> str:
    import json

    return json.dumps(obj, indent=1, sort_keys=True)
