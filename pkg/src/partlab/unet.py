"""Miniature text-conditioned denoiser with taggable attention blocks.

The network is a 3-level UNet over 32x32x3 inputs in [-1, 1]:

    stem conv -> [res + self-attn + cross-attn] at 32, 16, 8 -> mid res
    -> mirrored decoder with skip concats -> group-norm head -> noise estimate

Every attention block exposes a named hook point at its post-attention
features (the attention-weighted value aggregate, before the output
projection). Hooks receive that tensor and may return a replacement of the
same shape, which is how feature blending between batch rows is implemented.
Cross-attention probability maps can be returned for mask supervision; they
stay on the autodiff tape, so losses on them reach the prompt embedding.

Attention layers are numbered 0..5 in execution order (encoder 32, 16, 8,
then decoder 8, 16, 32); hook names are "self<i>" and "cross<i>".
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import container, rng
from . import tensor as T
from .text import CONTEXT_LEN, D_EMBED

N_ATTN_LAYERS = 6
CROSS_LAYER_RES: tuple[int, ...] = (32, 16, 8, 8, 16, 32)
SELF_HOOKS = tuple(f"self{i}" for i in range(N_ATTN_LAYERS))
CROSS_HOOKS = tuple(f"cross{i}" for i in range(N_ATTN_LAYERS))
HOOK_NAMES = frozenset(SELF_HOOKS + CROSS_HOOKS)

CHECKPOINT_KIND = "denoiser-checkpoint"


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int = 3
    channels: tuple[int, int, int] = (16, 32, 64)
    groups: int = 8
    d_embed: int = D_EMBED
    context_len: int = CONTEXT_LEN
    time_dim: int = 64


def time_embedding(t_vec, dim: int) -> np.ndarray:
    """Sinusoidal features of integer timesteps, shape (B, dim)."""
    t = np.atleast_1d(np.asarray(t_vec, dtype=np.float64)).reshape(-1, 1)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    angle = t * freqs[None, :]
    return np.concatenate([np.sin(angle), np.cos(angle)], axis=1)


def _param_specs(cfg: UNetConfig) -> list[tuple[str, tuple[int, ...], str]]:
    c0, c1, c2 = cfg.channels
    td, de = cfg.time_dim, cfg.d_embed
    specs: list[tuple[str, tuple[int, ...], str]] = []

    def conv(name, oc, ic, zero=False):
        specs.append((f"{name}.w", (oc, ic, 3, 3), "zeros" if zero else "conv"))
        specs.append((f"{name}.b", (oc,), "zeros"))

    def linear(name, nin, nout, zero=False):
        specs.append((f"{name}.w", (nin, nout), "zeros" if zero else "linear"))
        specs.append((f"{name}.b", (nout,), "zeros"))

    def gn(name, c):
        specs.append((f"{name}.g", (c,), "ones"))
        specs.append((f"{name}.b", (c,), "zeros"))

    def res(prefix, cin, cout):
        gn(f"{prefix}.gn1", cin)
        conv(f"{prefix}.conv1", cout, cin)
        linear(f"{prefix}.tproj", td, cout)
        gn(f"{prefix}.gn2", cout)
        conv(f"{prefix}.conv2", cout, cout, zero=True)
        if cin != cout:
            linear(f"{prefix}.skip", cin, cout)

    def attn(prefix, c, kv_dim):
        gn(f"{prefix}.gn", c)
        specs.append((f"{prefix}.wq", (c, c), "linear"))
        specs.append((f"{prefix}.wk", (kv_dim, c), "linear"))
        specs.append((f"{prefix}.wv", (kv_dim, c), "linear"))
        specs.append((f"{prefix}.wo", (c, c), "zeros"))
        specs.append((f"{prefix}.bo", (c,), "zeros"))

    def level(prefix, cin, cout):
        res(f"{prefix}.res", cin, cout)
        attn(f"{prefix}.self", cout, cout)
        attn(f"{prefix}.cross", cout, de)

    conv("stem", c0, cfg.in_channels)
    linear("temb.l1", td, td)
    linear("temb.l2", td, td)
    level("enc0", c0, c0)
    conv("down0", c1, c0)
    level("enc1", c1, c1)
    conv("down1", c2, c1)
    level("enc2", c2, c2)
    res("mid.res", c2, c2)
    level("dec2", 2 * c2, c2)
    conv("up1", c1, c2)
    level("dec1", 2 * c1, c1)
    conv("up0", c0, c1)
    level("dec0", 2 * c0, c0)
    gn("head.gn", c0)
    conv("head.conv", cfg.in_channels, c0, zero=True)
    return specs


def _init_param(name: str, shape: tuple[int, ...], kind: str, seed: int) -> np.ndarray:
    if kind == "zeros":
        return np.zeros(shape)
    if kind == "ones":
        return np.ones(shape)
    g = rng.stream(seed, f"param:{name}")
    if kind == "conv":
        fan_in = shape[1] * shape[2] * shape[3]
        return g.normal(scale=math.sqrt(2.0 / fan_in), size=shape)
    if kind == "linear":
        return g.normal(scale=math.sqrt(1.0 / shape[0]), size=shape)
    raise ValueError(f"unknown init kind {kind!r}")


def _flatten_hw(x: T.Tensor) -> T.Tensor:
    b, c, h, w = x.shape
    return T.transpose(T.reshape(x, (b, c, h * w)), (0, 2, 1))


def _unflatten_hw(x: T.Tensor, h: int, w: int) -> T.Tensor:
    b, hw, c = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1)), (b, c, h, w))


def _linear(x: T.Tensor, w: T.Tensor, b: T.Tensor) -> T.Tensor:
    return T.matmul(x, w) + b


def _conv(x: T.Tensor, w: T.Tensor, b: T.Tensor) -> T.Tensor:
    return T.conv2d_3x3(x, w) + T.reshape(b, (1, b.shape[0], 1, 1))


class MiniUNet:
    def __init__(self, config: UNetConfig, params: dict[str, T.Tensor]):
        expected = {name for name, _, _ in _param_specs(config)}
        if set(params) != expected:
            missing = sorted(expected - set(params))
            extra = sorted(set(params) - expected)
            raise ValueError(f"parameter set mismatch: missing {missing}, extra {extra}")
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: UNetConfig | None = None, seed: int = 0) -> "MiniUNet":
        config = config or UNetConfig()
        params = {
            name: T.Tensor(_init_param(name, shape, kind, seed), requires_grad=True)
            for name, shape, kind in _param_specs(config)
        }
        return cls(config, params)

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        meta = {"kind": CHECKPOINT_KIND, "config": asdict(self.config)}
        container.save_tensors(path, {k: v.data for k, v in self.params.items()}, meta)

    @classmethod
    def load(cls, path) -> "MiniUNet":
        arrays, meta = container.load_tensors(path)
        if meta.get("kind") != CHECKPOINT_KIND:
            raise ValueError(f"{path}: not a {CHECKPOINT_KIND} (kind={meta.get('kind')!r})")
        raw = meta["config"]
        raw["channels"] = tuple(raw["channels"])
        config = UNetConfig(**raw)
        params = {k: T.Tensor(v, requires_grad=True) for k, v in arrays.items()}
        return cls(config, params)

    def state_hash(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name].data).tobytes())
        return h.hexdigest()

    @property
    def param_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    # -- forward pass ---------------------------------------------------------

    def _res(self, prefix: str, x: T.Tensor, tact: T.Tensor) -> T.Tensor:
        p = self.params
        cout = p[f"{prefix}.conv1.w"].shape[0]
        h = T.group_norm(x, self.config.groups, p[f"{prefix}.gn1.g"], p[f"{prefix}.gn1.b"])
        h = _conv(T.silu(h), p[f"{prefix}.conv1.w"], p[f"{prefix}.conv1.b"])
        tp = _linear(tact, p[f"{prefix}.tproj.w"], p[f"{prefix}.tproj.b"])
        h = h + T.reshape(tp, (tp.shape[0], cout, 1, 1))
        h = T.group_norm(h, self.config.groups, p[f"{prefix}.gn2.g"], p[f"{prefix}.gn2.b"])
        h = _conv(T.silu(h), p[f"{prefix}.conv2.w"], p[f"{prefix}.conv2.b"])
        if f"{prefix}.skip.w" in p:
            x = _unflatten_hw(
                _linear(_flatten_hw(x), p[f"{prefix}.skip.w"], p[f"{prefix}.skip.b"]),
                x.shape[2],
                x.shape[3],
            )
        return x + h

    def _attn(self, prefix, hook_name, x, hooks, kv=None):
        p = self.params
        b, c, h, w = x.shape
        norm = T.group_norm(x, self.config.groups, p[f"{prefix}.gn.g"], p[f"{prefix}.gn.b"])
        q_in = _flatten_hw(norm)
        q = T.matmul(q_in, p[f"{prefix}.wq"])
        src = q_in if kv is None else kv
        k = T.matmul(src, p[f"{prefix}.wk"])
        v = T.matmul(src, p[f"{prefix}.wv"])
        logits = T.matmul(q, T.transpose(k, (0, 2, 1)))
        attn = T.softmax_lastdim(logits, scale=1.0 / math.sqrt(c))
        feats = T.matmul(attn, v)
        if hook_name in hooks:
            replaced = hooks[hook_name](feats)
            if not isinstance(replaced, T.Tensor) or replaced.shape != feats.shape:
                got = getattr(replaced, "shape", type(replaced))
                raise ValueError(
                    f"hook {hook_name!r} must return a Tensor of shape {feats.shape}, got {got}"
                )
            feats = replaced
        out = T.matmul(feats, p[f"{prefix}.wo"]) + p[f"{prefix}.bo"]
        return x + _unflatten_hw(out, h, w), attn

    def _level(self, prefix, layer, x, tact, context, hooks, maps):
        x = self._res(f"{prefix}.res", x, tact)
        x, _ = self._attn(f"{prefix}.self", f"self{layer}", x, hooks)
        x, attn = self._attn(f"{prefix}.cross", f"cross{layer}", x, hooks, kv=context)
        maps[layer] = attn
        return x

    def forward(self, x, t_vec, context, hooks=None, want_maps=False):
        """Noise estimate for x at timesteps t_vec under the given context.

        x: Tensor or array (B, 3, 32, 32); context: Tensor (B or 1, context_len,
        d_embed); hooks: dict of hook name -> callable replacing post-attention
        features. Returns (eps_hat, maps) where maps is {layer: (B, HW, ctx)}
        cross-attention probabilities (empty unless want_maps).
        """
        hooks = hooks or {}
        unknown = set(hooks) - HOOK_NAMES
        if unknown:
            raise ValueError(f"unknown hook names {sorted(unknown)}; valid: {sorted(HOOK_NAMES)}")
        p, cfg = self.params, self.config
        if not isinstance(x, T.Tensor):
            x = T.Tensor(x)
        if not isinstance(context, T.Tensor):
            context = T.Tensor(context)
        if context.data.ndim == 2:
            context = T.reshape(context, (1,) + context.shape)
        # Cross-attention is length-agnostic in the kv direction: full prompts
        # use context_len rows, bare part tokens just two.
        if context.data.ndim != 3 or context.shape[2] != cfg.d_embed or context.shape[1] < 1:
            raise ValueError(
                f"context must be (B, n>=1, {cfg.d_embed}), got {context.shape}"
            )
        bsz = x.shape[0]
        t_arr = np.broadcast_to(np.atleast_1d(np.asarray(t_vec, dtype=np.int64)), (bsz,))

        temb = _linear(T.Tensor(time_embedding(t_arr, cfg.time_dim)), p["temb.l1.w"], p["temb.l1.b"])
        tact = T.silu(_linear(T.silu(temb), p["temb.l2.w"], p["temb.l2.b"]))

        maps: dict[int, T.Tensor] = {}
        h0 = self._level("enc0", 0, _conv(x, p["stem.w"], p["stem.b"]), tact, context, hooks, maps)
        h1 = self._level("enc1", 1, _conv(T.avg_pool2d(h0), p["down0.w"], p["down0.b"]), tact, context, hooks, maps)
        h2 = self._level("enc2", 2, _conv(T.avg_pool2d(h1), p["down1.w"], p["down1.b"]), tact, context, hooks, maps)
        m = self._res("mid.res", h2, tact)
        d2 = self._level("dec2", 3, T.concat([m, h2], axis=1), tact, context, hooks, maps)
        u1 = _conv(T.resize_bilinear(d2, 16, 16), p["up1.w"], p["up1.b"])
        d1 = self._level("dec1", 4, T.concat([u1, h1], axis=1), tact, context, hooks, maps)
        u0 = _conv(T.resize_bilinear(d1, 32, 32), p["up0.w"], p["up0.b"])
        d0 = self._level("dec0", 5, T.concat([u0, h0], axis=1), tact, context, hooks, maps)
        out = T.group_norm(d0, cfg.groups, p["head.gn.g"], p["head.gn.b"])
        eps = _conv(T.silu(out), p["head.conv.w"], p["head.conv.b"])
        return eps, (maps if want_maps else {})


def reference_net(seed: int = 0, scale: float = 0.05,
                  channels: tuple[int, int, int] = (8, 16, 16)) -> MiniUNet:
    """Small untrained net that is deterministic in its arguments.

    Zero-initialized tails (output projections, head conv) are nudged with
    seeded noise so attention maps and noise estimates react to their inputs.
    Used for regression goldens and plumbing tests where a trained checkpoint
    would be overkill; the weights never change across versions.
    """
    net = MiniUNet.init(UNetConfig(channels=channels), seed=seed)
    g = np.random.default_rng(seed + 77)
    for p in net.params.values():
        if not p.data.any():
            p.data += g.normal(scale=scale, size=p.data.shape)
    return net
