"""Shared edit engine behind the CLI and the HTTP service.

Both front ends funnel into the same two calls — ``Engine.edit`` on a parsed
``EditRequest``, then ``write_outcome`` for artifacts — so one payload
produces byte-identical PNGs no matter which door it entered through.

Prompt grammar
--------------
A source scene reads as its content tokens joined by spaces (kind, stance for
creatures, background, then one appearance attribute per part)::

    "creature quadruped sky red blue green"

An edit appends one clause per part in the console form
``with <attribute> <part-token>``, further clauses joined by ``and``::

    "creature quadruped sky red blue green with golden <creature-head>"
    "... with golden <creature-head> and striped <creature-legs>"

The source prefix is optional — the scene arrives structured in the payload —
but when present it must match that scene, which catches prompts that drifted
from the payload they were composed against.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import json
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import pngio, scenes, text
from . import tensor as T
from .config import EngineConfig
from .container import atomic_write_text
from .editor import (
    BINARIZE_MODES,
    EditJob,
    EditResult,
    edit_prompt_tokens,
    run_multi_part_edit,
)
from .sampler import invert, sample
from .schedule import make_schedule
from .scenes import SceneSpec
from .tokens import PAD_STRATEGIES, PartToken, split_part_name
from .training import load_pretrained

SCHEMA_VERSION = 1

_PART_TOKEN_RE = re.compile(r"^<([a-z]+-[a-z]+)>$")


class RequestError(ValueError):
    """Validation failure carrying per-field messages."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = [{"field": f, "message": m} for f, m in errors]
        super().__init__("; ".join(f"{f}: {m}" for f, m in errors))


class EngineError(RuntimeError):
    """Engine-side failure unrelated to request shape (bad paths, IO)."""


# ----------------------------------------------------------------- prompts


def scene_prompt_text(spec: SceneSpec) -> str:
    """Surface form of a scene prompt: content tokens joined by spaces."""
    toks = [spec.kind]
    if spec.stance:
        toks.append(spec.stance)
    toks.append(spec.background)
    toks.extend(spec.attrs)
    return " ".join(toks)


def parse_scene_prompt(prompt: str) -> dict:
    """Parse a bare scene prompt back into spec fields (sans seed).

    Raises ValueError naming the offending word; the inverse of
    `scene_prompt_text` on every valid spec.
    """
    words = prompt.split()
    if not words:
        raise ValueError("empty prompt")
    kind = words.pop(0)
    if kind not in scenes.PART_SLOTS:
        raise ValueError(f"unknown kind {kind!r}; choose from {sorted(scenes.PART_SLOTS)}")
    stance = None
    if kind == "creature":
        if not words or words[0] not in text.STANCE_TOKENS:
            raise ValueError(f"creature prompts need a stance from {text.STANCE_TOKENS}")
        stance = words.pop(0)
    if not words or words[0] not in text.BACKGROUND_RGB:
        got = words[0] if words else "nothing"
        raise ValueError(
            f"expected a background from {sorted(text.BACKGROUND_RGB)}, got {got!r}"
        )
    background = words.pop(0)
    n_parts = len(scenes.PART_SLOTS[kind])
    if len(words) != n_parts:
        raise ValueError(
            f"{kind!r} takes {n_parts} appearance tokens "
            f"({', '.join(scenes.PART_SLOTS[kind])}), got {len(words)}"
        )
    for w in words:
        if w not in text.ATTRIBUTE_TOKENS:
            raise ValueError(f"{w!r} is not an appearance attribute token")
    return {"kind": kind, "stance": stance, "background": background, "attrs": tuple(words)}


def parse_edit_clauses(prompt: str, spec: SceneSpec) -> dict[str, str]:
    """Extract {part token name: attribute} from an edit prompt.

    Accepts either the bare clause ("with golden <creature-head>") or the full
    prompt prefixed by the scene's surface form; multiple clauses join with
    "and".
    """
    text_ = " ".join(prompt.split())
    if text_.startswith("with "):
        prefix, rest = "", text_[len("with "):]
    elif " with " in text_:
        prefix, rest = text_.split(" with ", 1)
    else:
        raise ValueError("no editing clause; expected 'with <attribute> <part-token>'")
    if prefix and prefix != scene_prompt_text(spec):
        raise ValueError(
            f"prompt prefix {prefix!r} does not match the source scene "
            f"({scene_prompt_text(spec)!r})"
        )
    edits: dict[str, str] = {}
    for clause in rest.split(" and "):
        words = clause.split()
        if len(words) != 2:
            raise ValueError(
                f"clause {clause!r} must read '<attribute> <part-token>'"
            )
        attr, token_word = words
        m = _PART_TOKEN_RE.match(token_word)
        if m is None:
            raise ValueError(
                f"{token_word!r} is not a part token; expected the form '<kind-part>'"
            )
        name = m.group(1)
        split_part_name(name)  # unknown part -> ValueError listing known parts
        if attr not in text.ATTRIBUTE_TOKENS:
            raise ValueError(f"{attr!r} is not an appearance attribute token")
        if name in edits:
            raise ValueError(f"part token {name!r} appears in two clauses")
        edits[name] = attr
    return edits


# ----------------------------------------------------------------- request


@dataclass(frozen=True)
class EditRequest:
    """A fully validated edit request, ready for the engine."""

    scene: SceneSpec
    prompt: str
    edit_attrs: dict[str, str]
    t_edit: int
    omega_factor: float
    guidance: float
    seed: int
    padding: str
    binarize: str
    steps: int
    image: np.ndarray | None = None  # (32, 32, 3) in [0, 1]; None = generate

    def payload_echo(self) -> dict:
        """JSON-safe request description for receipts and job records."""
        return {
            "scene": json.loads(self.scene.to_json()),
            "prompt": self.prompt,
            "edit_attrs": dict(self.edit_attrs),
            "t_edit": self.t_edit,
            "omega_factor": self.omega_factor,
            "guidance": self.guidance,
            "seed": self.seed,
            "padding": self.padding,
            "binarize": self.binarize,
            "steps": self.steps,
            "source": "image" if self.image is not None else "seed",
        }


_PAYLOAD_KEYS = {
    "scene", "prompt", "t_edit", "omega_factor", "guidance", "seed",
    "padding", "binarize", "steps", "image",
}
_SCENE_KEYS = {"kind", "stance", "background", "attrs", "seed"}


def _check_scene(data, errors) -> SceneSpec | None:
    if not isinstance(data, dict):
        errors.append(("scene", "must be an object with kind/stance/background/attrs/seed"))
        return None
    unknown = sorted(set(data) - _SCENE_KEYS)
    if unknown:
        errors.append(("scene", f"unknown fields {unknown}"))
        return None
    kind = data.get("kind")
    if kind not in scenes.PART_SLOTS:
        errors.append(("scene.kind", f"must be one of {sorted(scenes.PART_SLOTS)}"))
        return None
    stance = data.get("stance")
    if kind == "creature":
        if stance not in text.STANCE_TOKENS:
            errors.append(("scene.stance", f"creatures need a stance from {text.STANCE_TOKENS}"))
            return None
    elif stance is not None:
        errors.append(("scene.stance", f"{kind!r} takes no stance"))
        return None
    background = data.get("background")
    if background not in text.BACKGROUND_RGB:
        errors.append(("scene.background", f"must be one of {sorted(text.BACKGROUND_RGB)}"))
        return None
    attrs = data.get("attrs")
    n_parts = len(scenes.PART_SLOTS[kind])
    if (
        not isinstance(attrs, (list, tuple))
        or len(attrs) != n_parts
        or not all(a in text.ATTRIBUTE_TOKENS for a in attrs)
    ):
        errors.append(
            ("scene.attrs", f"must list {n_parts} appearance tokens, one per part")
        )
        return None
    seed = data.get("seed")
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        errors.append(("scene.seed", "must be a non-negative integer"))
        return None
    return SceneSpec(kind, stance, background, tuple(attrs), seed)


def _check_number(payload, key, default, errors, *, integer=False, minimum=None):
    value = payload.get(key)
    if value is None:  # absent and JSON null both mean "use the default"
        value = default
    ok_types = (int,) if integer else (int, float)
    if isinstance(value, bool) or not isinstance(value, ok_types):
        errors.append((key, "must be an integer" if integer else "must be a number"))
        return default
    if minimum is not None and value < minimum:
        errors.append((key, f"must be >= {minimum}"))
        return default
    return value


def _check_image(encoded, errors) -> np.ndarray | None:
    if encoded is None:
        return None
    if not isinstance(encoded, str):
        errors.append(("image", "must be a base64-encoded PNG string"))
        return None
    try:
        image = pngio.read_png(base64.b64decode(encoded, validate=True))
    except (binascii.Error, OSError, ValueError):
        errors.append(("image", "could not decode as base64 PNG"))
        return None
    if image.shape != (scenes.SIZE, scenes.SIZE, 3):
        errors.append(("image", f"must be {scenes.SIZE}x{scenes.SIZE} RGB, got {image.shape[:2]}"))
        return None
    return image


def request_from_payload(
    payload: dict,
    config: EngineConfig,
    known_tokens: set[str] | None = None,
) -> EditRequest:
    """Validate a JSON-shaped payload into an EditRequest.

    Collects every field problem before raising, so a 400 response can name
    all of them at once. `known_tokens` (names with trained containers) lets
    callers reject edits whose part tokens were never trained; the error
    names the container path the engine looked for.
    """
    errors: list[tuple[str, str]] = []
    if not isinstance(payload, dict):
        raise RequestError([("body", "request body must be a JSON object")])
    unknown = sorted(set(payload) - _PAYLOAD_KEYS)
    if unknown:
        errors.append(("body", f"unknown fields {unknown}"))
    spec = _check_scene(payload.get("scene"), errors)

    steps = _check_number(payload, "steps", config.steps, errors, integer=True, minimum=1)
    default_t_edit = config.resolved_t_edit if steps == config.steps else steps
    t_edit = _check_number(payload, "t_edit", default_t_edit, errors, integer=True)
    if not 1 <= t_edit <= steps:
        errors.append(("t_edit", f"must satisfy 1 <= t_edit <= steps ({steps})"))
    omega = _check_number(payload, "omega_factor", config.omega_factor, errors, minimum=1.0)
    guidance = _check_number(payload, "guidance", config.guidance, errors)
    if isinstance(guidance, (int, float)) and guidance <= 0:
        errors.append(("guidance", "must be positive"))
    padding = payload.get("padding")
    if padding is None:
        padding = config.padding
    if padding not in PAD_STRATEGIES:
        errors.append(("padding", f"must be one of {PAD_STRATEGIES}"))
    binarize = payload.get("binarize")
    if binarize is None:
        binarize = config.binarize
    if binarize not in BINARIZE_MODES:
        errors.append(("binarize", f"must be one of {BINARIZE_MODES}"))
    image = _check_image(payload.get("image"), errors)

    seed = payload.get("seed")
    if seed is None:
        seed = spec.seed if spec is not None else 0
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        errors.append(("seed", "must be a non-negative integer"))
        seed = 0

    prompt = payload.get("prompt")
    edit_attrs: dict[str, str] = {}
    if not isinstance(prompt, str) or not prompt.strip():
        errors.append(("prompt", "must be a non-empty string"))
    elif spec is not None:
        try:
            edit_attrs = parse_edit_clauses(prompt, spec)
        except ValueError as exc:
            errors.append(("prompt", str(exc)))
        else:
            for name in edit_attrs:
                kind = name.split("-", 1)[0]
                if kind != spec.kind:
                    errors.append(
                        ("prompt", f"part token {name!r} does not match the "
                                   f"scene kind {spec.kind!r}")
                    )
                elif known_tokens is not None and name not in known_tokens:
                    errors.append(
                        ("prompt", f"no trained token {name!r}; expected a "
                                   f"container at {token_path(config.token_store, name)}")
                    )
    if errors:
        raise RequestError(errors)

    request = EditRequest(
        scene=spec,
        prompt=prompt,
        edit_attrs=edit_attrs,
        t_edit=t_edit,
        omega_factor=float(omega),
        guidance=float(guidance),
        seed=seed,
        padding=padding,
        binarize=binarize,
        steps=steps,
        image=image,
    )
    # Probe-build the underlying job so any residual invariant surfaces now,
    # at request time, instead of inside the worker.
    try:
        job = _job_stub(request)
        edit_prompt_tokens(job)
    except ValueError as exc:
        raise RequestError([("body", str(exc))]) from exc
    return request


def _job_stub(request: EditRequest) -> EditJob:
    return EditJob(
        source_prompt=request.scene.prompt_tokens(),
        edit_attrs=dict(request.edit_attrs),
        seed=request.seed,
        t_e=request.t_edit,
        omega_factor=request.omega_factor,
        guidance=request.guidance,
        padding=request.padding,
        T=request.steps,
        binarize=request.binarize,
    )


# ------------------------------------------------------------------ engine


@dataclass
class EditOutcome:
    request: EditRequest
    result: EditResult
    receipt: dict = field(default_factory=dict)


def load_token_store(store_dir: str | Path) -> dict[str, PartToken]:
    """Load every part-token container under a directory, keyed by name."""
    store: dict[str, PartToken] = {}
    root = Path(store_dir)
    if not root.is_dir():
        return store
    for path in sorted(root.glob("*.json")):
        try:
            token = PartToken.load(path)
        except (ValueError, KeyError):
            continue  # a non-token container living in the same directory
        store[token.name] = token
    return store


def token_path(store_dir: str | Path, name: str) -> Path:
    return Path(store_dir) / f"{name}.json"


class Engine:
    """Loaded model + token store + defaults; executes edits one at a time."""

    def __init__(self, config: EngineConfig):
        self.config = config
        checkpoint = Path(config.checkpoint)
        if not (checkpoint / "model.json").exists():
            raise EngineError(
                f"no checkpoint at {checkpoint}/model.json; run `pretrain` first"
            )
        self.net, self.table = load_pretrained(checkpoint)
        self.tokens = load_token_store(config.token_store)
        self._lock = threading.Lock()

    def token_names(self) -> set[str]:
        return set(self.tokens)

    def token_rows(self) -> list[dict]:
        """JSON-safe listing of the trained part tokens."""
        return [
            {
                "name": tok.name,
                "window": {"t_start": tok.t_start, "t_end": tok.t_end},
                "layers": list(tok.layers),
                "steps": tok.steps,
                "train_count": tok.train_count,
            }
            for _, tok in sorted(self.tokens.items())
        ]

    def parse_request(self, payload: dict) -> EditRequest:
        return request_from_payload(payload, self.config, self.token_names())

    def edit(self, request: EditRequest) -> EditOutcome:
        missing = sorted(set(request.edit_attrs) - set(self.tokens))
        if missing:
            paths = ", ".join(str(token_path(self.config.token_store, n)) for n in missing)
            raise EngineError(f"no trained token container at {paths}")
        started = time.time()
        with self._lock:
            job = self._build_job(request)
            result = run_multi_part_edit(self.net, self.table, self.tokens, job)
        receipt = build_receipt(request, result, duration=time.time() - started)
        return EditOutcome(request=request, result=result, receipt=receipt)

    def _build_job(self, request: EditRequest) -> EditJob:
        job = _job_stub(request)
        if request.image is not None:
            sched = make_schedule(request.steps)
            x0 = scenes.model_space(request.image).transpose(2, 0, 1)
            with T.no_grad():
                ctx_c = text.encode_prompt(request.scene.prompt_tokens(), self.table).data
                ctx_u = text.encode_prompt(text.null_prompt_tokens(), self.table).data
                trajectory = invert(self.net, sched, x0, ctx_c, ctx_u)
            job.seed = None
            job.trajectory = trajectory
        return job

    def generate(self, seed: int, prompt: str) -> np.ndarray:
        """Sample a source image for a bare scene prompt; (32, 32, 3) floats."""
        if " with " in f" {prompt} " or prompt.strip().startswith("with "):
            raise ValueError(
                "generation takes a bare scene prompt; editing clauses belong to edit jobs"
            )
        fields = parse_scene_prompt(prompt)
        spec = SceneSpec(seed=seed, **fields)
        with self._lock, T.no_grad():
            sched = make_schedule(self.config.steps)
            ctx_c = text.encode_prompt(spec.prompt_tokens(), self.table).data
            ctx_u = text.encode_prompt(text.null_prompt_tokens(), self.table).data
            traj = sample(
                self.net, sched, ctx_c, ctx_u, seed=seed, guidance=self.config.guidance
            )
        return scenes.image_space(traj.x0).transpose(1, 2, 0)


# --------------------------------------------------------------- artifacts


def build_receipt(request: EditRequest, result: EditResult, duration: float) -> dict:
    mask_files = {str(m.t): f"mask/{m.t}.png" for m in result.masks}
    return {
        "schema_version": SCHEMA_VERSION,
        "request": request.payload_echo(),
        "parts": list(result.parts),
        "edit_tokens": list(result.edit_tokens),
        "steps": [
            {
                "t": m.t,
                "blended": m.blended,
                "k": {p: float(v) for p, v in m.k.items()},
                "omega": {p: float(v) for p, v in m.omega.items()},
                "degenerate": dict(m.degenerate),
            }
            for m in result.masks
        ],
        "artifacts": {
            "result": "result.png",
            "source": "source.png",
            "receipt": "receipt.json",
            "masks": mask_files,
        },
        "digests": {
            "result_png": hashlib.sha256(pngio.png_bytes(result.image)).hexdigest(),
            "source_png": hashlib.sha256(pngio.png_bytes(result.source_image)).hexdigest(),
        },
        "timings": {"duration_s": round(duration, 3)},
        "meta": {k: v for k, v in result.meta.items() if _json_safe(v)},
    }


def _json_safe(value) -> bool:
    return isinstance(value, (str, int, float, bool, type(None)))


def write_outcome(outcome: EditOutcome, out_dir: str | Path) -> dict[str, Path]:
    """Write result/source PNGs, per-step masks, and the JSON receipt."""
    out = Path(out_dir)
    paths: dict[str, Path] = {}
    pngio.write_png(out / "result.png", outcome.result.image)
    paths["result"] = out / "result.png"
    pngio.write_png(out / "source.png", outcome.result.source_image)
    paths["source"] = out / "source.png"
    for m in outcome.result.masks:
        p = out / "mask" / f"{m.t}.png"
        pngio.write_mask_png(p, m.combined)
        paths[f"mask/{m.t}"] = p
    atomic_write_text(
        out / "receipt.json", json.dumps(outcome.receipt, indent=1, sort_keys=True)
    )
    paths["receipt"] = out / "receipt.json"
    return paths
