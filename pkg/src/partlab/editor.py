"""Part editing via parallel denoising paths and attention-feature blending.

One batched forward per step carries five kinds of rows: the source path
(conditional + unconditional), the edit path (conditional + unconditional),
and one localization row per part token, evaluated on the source latents. The
localization rows' cross-attention maps from the *previous* step are resized,
summed over the token's layers, and min-max normalized into a blending mask
(the first step bootstraps from its own maps). The mask is band-thresholded
around each part's OTSU split, and during the first t_e of the T denoising
steps it mixes edit-path and source-path features at every self/cross
attention layer, plus the updated latents. Blending over all T steps replays
the source exactly outside the mask; stopping early (small t_e) frees the
trailing steps to restyle beyond the part, trading locality for effect.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng, scenes, text
from . import tensor as T
from .masks import apply_band_threshold, otsu_threshold, resize_map, sum_resized_maps
from .sampler import Trajectory, ddim_step, guided_noise
from .schedule import make_schedule
from .tokens import PAD_STRATEGIES, PartToken, pad_token_embedding, split_part_name
from .unet import CROSS_LAYER_RES, MiniUNet

log = logging.getLogger(__name__)

BINARIZE_MODES = ("adaptive", "fixed-0.5", "otsu-binary")

# Batch row layout of the per-step forward pass.
ROW_SRC_COND, ROW_SRC_UNCOND, ROW_EDIT_COND, ROW_EDIT_UNCOND, ROW_LOC0 = 0, 1, 2, 3, 4


@dataclass
class BlendMask:
    """Per-step record of the aggregated and thresholded blending masks."""

    t: int
    aggregated: dict[str, np.ndarray]  # part -> M_t, 32x32 in [0,1]
    thresholded: dict[str, np.ndarray]  # part -> T(M_t)
    k: dict[str, float]
    omega: dict[str, float]
    degenerate: dict[str, bool]
    combined: np.ndarray  # max over parts, 32x32
    layer_cache: dict[int, np.ndarray]  # side -> combined mask at that size
    blended: bool = False


@dataclass
class EditJob:
    """A full edit request over one source scene.

    The source is either a generation seed (synthetic path) or a recorded
    trajectory (real-image path after inversion); exactly one must be given.
    """

    source_prompt: list[str]
    edit_attrs: dict[str, str]  # part token name -> replacement attribute
    seed: int | None = None
    trajectory: Trajectory | None = None
    t_e: int = 50  # how many denoising steps (from the first) apply blending
    omega_factor: float = 1.5
    guidance: float = 7.5
    padding: str = "bg"
    T: int = 50
    binarize: str = "adaptive"
    mask_override: dict[str, np.ndarray] | None = None  # test hook: forces T(M)

    def __post_init__(self):
        if not 1 <= self.t_e <= self.T:
            raise ValueError(f"t_e must satisfy 1 <= t_e <= T, got t_e={self.t_e}, T={self.T}")
        if self.padding not in PAD_STRATEGIES:
            raise ValueError(f"unknown padding strategy {self.padding!r}")
        if self.binarize not in BINARIZE_MODES:
            raise ValueError(f"unknown binarize mode {self.binarize!r}; choose from {BINARIZE_MODES}")
        if not self.edit_attrs:
            raise ValueError("edit_attrs must name at least one part token")
        if (self.seed is None) == (self.trajectory is None):
            raise ValueError("provide exactly one source: a seed or a trajectory")


@dataclass
class EditResult:
    image: np.ndarray  # edited output, HWC in [0,1]
    source_image: np.ndarray  # source path output, HWC in [0,1]
    masks: list[BlendMask]  # per step, t = T..1
    edit_tokens: list[str]
    parts: list[str]
    meta: dict = field(default_factory=dict)


def edit_prompt_tokens(job: EditJob) -> list[str]:
    """Source prompt with each edited part's attribute slot swapped."""
    toks = list(job.source_prompt)
    if len(toks) < text.CONTEXT_LEN:
        toks += [text.PAD] * (text.CONTEXT_LEN - len(toks))
    for part_name, attr in job.edit_attrs.items():
        kind, word = split_part_name(part_name)
        if toks[text.SLOT_KIND] != kind:
            raise ValueError(
                f"token {part_name!r} does not match the source prompt's kind "
                f"{toks[text.SLOT_KIND]!r}"
            )
        if attr not in text.ATTRIBUTE_TOKENS:
            raise ValueError(f"{attr!r} is not an appearance attribute token")
        slot = text.SLOT_ATTR0 + scenes.PART_SLOTS[kind].index(word)
        toks[slot] = attr
    return toks


def _threshold_part(m: np.ndarray, mode: str, omega_factor: float):
    """Apply one part's binarization rule; returns (T(M), k, omega, degenerate)."""
    k, degenerate = otsu_threshold(m)
    if mode == "fixed-0.5":
        return (m >= 0.5).astype(np.float64), k, 0.5, degenerate
    if degenerate:
        return np.zeros_like(m), k, omega_factor * k, True
    if mode == "otsu-binary":
        return (m >= k).astype(np.float64), k, k, False
    return apply_band_threshold(m, k, omega_factor * k), k, omega_factor * k, False


def _build_blend_mask(
    t: int,
    part_columns: list[dict[int, np.ndarray]],
    parts: list[str],
    tokens: list[PartToken],
    job: EditJob,
) -> BlendMask:
    """Aggregate (joint min-max across parts) and threshold the step's masks."""
    sums = [
        sum_resized_maps(cols, tok.layers, scenes.SIZE)
        for cols, tok in zip(part_columns, tokens)
    ]
    gmin = min(s.min() for s in sums)
    gmax = max(s.max() for s in sums)
    aggregated, thresholded, ks, omegas, degenerate = {}, {}, {}, {}, {}
    for part, s in zip(parts, sums):
        if gmax <= gmin:
            m = np.zeros_like(s)
        else:
            m = (s - gmin) / (gmax - gmin)
        tm, k, omega, deg = _threshold_part(m, job.binarize, job.omega_factor)
        if job.mask_override is not None and part in job.mask_override:
            tm = np.asarray(job.mask_override[part], dtype=np.float64)
            deg = False
        aggregated[part], thresholded[part] = m, tm
        ks[part], omegas[part], degenerate[part] = k, omega, deg
    combined = thresholded[parts[0]]
    for part in parts[1:]:
        combined = np.maximum(combined, thresholded[part])
    layer_cache = {
        side: (combined if side == scenes.SIZE else resize_map(combined, side))
        for side in sorted(set(CROSS_LAYER_RES))
    }
    return BlendMask(
        t=t,
        aggregated=aggregated,
        thresholded=thresholded,
        k=ks,
        omega=omegas,
        degenerate=degenerate,
        combined=combined,
        layer_cache=layer_cache,
    )


def _make_hooks(mask: BlendMask, parts: list[str], sequential: bool):
    """Feature-blending hooks for every self/cross attention point.

    Each hook mixes the edit rows toward the source rows with the step's mask
    resized to that layer; localization and source rows pass through untouched.
    """
    hooks = {}

    def make(side: int):
        if sequential:
            # Paste-accumulate: start from source features and blend each
            # part's edit features in, in turn. On disjoint supports this is
            # algebraically identical to one blend with the max-combined mask.
            cols = [
                resize_map(mask.thresholded[p], side).reshape(1, -1, 1)
                if side != scenes.SIZE
                else mask.thresholded[p].reshape(1, -1, 1)
                for p in parts
            ]

            def hook(feats: T.Tensor) -> T.Tensor:
                data = feats.data.copy()
                edit_raw = data[ROW_EDIT_COND:ROW_EDIT_UNCOND + 1].copy()
                acc = data[ROW_SRC_COND:ROW_SRC_UNCOND + 1].copy()
                for col in cols:
                    acc = col * edit_raw + (1.0 - col) * acc
                data[ROW_EDIT_COND:ROW_EDIT_UNCOND + 1] = acc
                return T.Tensor(data)

        else:
            col = mask.layer_cache[side].reshape(1, -1, 1)

            def hook(feats: T.Tensor) -> T.Tensor:
                data = feats.data.copy()
                data[ROW_EDIT_COND:ROW_EDIT_UNCOND + 1] = (
                    col * data[ROW_EDIT_COND:ROW_EDIT_UNCOND + 1]
                    + (1.0 - col) * data[ROW_SRC_COND:ROW_SRC_UNCOND + 1]
                )
                return T.Tensor(data)

        return hook

    for layer, side in enumerate(CROSS_LAYER_RES):
        fn = make(side)
        hooks[f"self{layer}"] = fn
        hooks[f"cross{layer}"] = fn
    return hooks


def _loc_columns(
    net: MiniUNet, x_src: np.ndarray, t: int, loc_ctxs: list[np.ndarray]
) -> list[dict[int, np.ndarray]]:
    """Part-row attention columns of each localization context at state x_src."""
    batch = np.repeat(x_src[None], len(loc_ctxs), axis=0)
    with T.no_grad():
        _, maps = net.forward(batch, t, T.Tensor(np.stack(loc_ctxs)), want_maps=True)
    return [
        {layer: m.data[i, :, 0] for layer, m in maps.items()} for i in range(len(loc_ctxs))
    ]


def run_multi_part_edit(
    net: MiniUNet,
    table: T.Tensor,
    token_store: dict[str, PartToken],
    job: EditJob,
    _sequential_blend: bool = False,
) -> EditResult:
    """Denoise source and edit paths together, blending per-part features."""
    missing = [p for p in job.edit_attrs if p not in token_store]
    if missing:
        raise ValueError(f"unknown part tokens {missing}; loaded: {sorted(token_store)}")
    parts = list(job.edit_attrs)
    tokens = [token_store[p] for p in parts]
    edit_tokens = edit_prompt_tokens(job)
    sched = make_schedule(job.T)

    with T.no_grad():
        src_ctx = text.encode_prompt(job.source_prompt, table).data
        edit_ctx = text.encode_prompt(edit_tokens, table).data
        null_ctx = text.encode_prompt(text.null_prompt_tokens(), table).data
    loc_ctxs = [
        pad_token_embedding(tok, job.padding, table, source_embedding=src_ctx)
        for tok in tokens
    ]
    contexts = T.Tensor(np.stack([src_ctx, null_ctx, edit_ctx, null_ctx, *loc_ctxs]))

    if job.trajectory is not None:
        if job.trajectory.T != job.T:
            raise ValueError(
                f"trajectory horizon {job.trajectory.T} != job horizon {job.T}"
            )
        x_src = np.array(job.trajectory.xT)
    else:
        x_src = rng.stream(job.seed, "init-noise").normal(
            size=(1, net.config.in_channels, scenes.SIZE, scenes.SIZE)
        )[0]
    x_edit = x_src.copy()

    records: list[BlendMask] = []
    prev_columns: list[dict[int, np.ndarray]] | None = None
    n_parts = len(parts)
    for t in range(job.T, 0, -1):
        if job.trajectory is not None:
            x_src = job.trajectory.states[t]
        if prev_columns is None:  # first step bootstraps from its own maps
            prev_columns = _loc_columns(net, x_src, t, loc_ctxs)
        mask = _build_blend_mask(t, prev_columns, parts, tokens, job)
        blend = (job.T - t + 1) <= job.t_e  # blending spans the first t_e steps
        hooks = _make_hooks(mask, parts, _sequential_blend) if blend else {}

        batch = np.stack([x_src, x_src, x_edit, x_edit] + [x_src] * n_parts)
        with T.no_grad():
            eps_all, maps = net.forward(batch, t, contexts, hooks=hooks, want_maps=True)
        eps = eps_all.data
        prev_columns = [
            {layer: m.data[ROW_LOC0 + i, :, 0] for layer, m in maps.items()}
            for i in range(n_parts)
        ]
        eps_src = guided_noise(eps[ROW_SRC_COND], eps[ROW_SRC_UNCOND], job.guidance)
        eps_edit = guided_noise(eps[ROW_EDIT_COND], eps[ROW_EDIT_UNCOND], job.guidance)
        if job.trajectory is not None:
            x_src = job.trajectory.states[t - 1]
        else:
            x_src = ddim_step(x_src, t, eps_src, sched)
        x_edit = ddim_step(x_edit, t, eps_edit, sched)
        if blend:
            if _sequential_blend:
                acc = x_src.copy()
                for part in parts:
                    tm = mask.thresholded[part]
                    acc = tm * x_edit + (1.0 - tm) * acc
                x_edit = acc
            else:
                tm = mask.combined
                x_edit = tm * x_edit + (1.0 - tm) * x_src
        mask.blended = blend
        records.append(mask)

    if job.mask_override is None:
        for part in parts:
            if all(rec.degenerate[part] for rec in records):
                log.warning(
                    "part token %r: no part found (degenerate mask at every step)", part
                )
    to_image = lambda x: scenes.image_space(x).transpose(1, 2, 0)  # noqa: E731
    return EditResult(
        image=to_image(x_edit),
        source_image=to_image(x_src),
        masks=records,
        edit_tokens=edit_tokens,
        parts=parts,
        meta={
            "t_e": job.t_e,
            "omega_factor": job.omega_factor,
            "guidance": job.guidance,
            "padding": job.padding,
            "binarize": job.binarize,
            "seed": job.seed,
            "inverted_source": job.trajectory is not None,
        },
    )


def run_edit(
    net: MiniUNet, table: T.Tensor, token_store: dict[str, PartToken], job: EditJob
) -> EditResult:
    """Single-part edit; the one-token case of the multi-part procedure."""
    if len(job.edit_attrs) != 1:
        raise ValueError(
            f"run_edit edits exactly one part, got {len(job.edit_attrs)}; "
            "use run_multi_part_edit"
        )
    return run_multi_part_edit(net, table, token_store, job)


def binarization_study(
    net: MiniUNet,
    table: T.Tensor,
    token_store: dict[str, PartToken],
    job: EditJob,
    strategies: tuple[str, ...] = BINARIZE_MODES,
) -> dict[str, EditResult]:
    """Render the same job once per mask binarization strategy."""
    return {
        mode: run_multi_part_edit(net, table, token_store, replace(job, binarize=mode))
        for mode in strategies
    }
