"""Editing benchmark: procedural cases, reference methods, and report tables.

A benchmark case is a rendered scene plus one requested part edit. Rendered
sources are the only images with trustworthy ground-truth masks, so engine
runs drive every case through the inversion pathway: render, DDIM-invert
under the source prompt, then edit with the recorded trajectory as the source
path. Evaluation scores the edited region against the target attribute and
the untouched region against the rendered source, mirroring the
edited/unedited split of the quantitative protocol.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import container, scenes, text
from .editor import EditJob, EditResult, edit_prompt_tokens, run_multi_part_edit
from .masks import otsu_threshold
from .metrics import canonical_patch, iou, masked_agreement, psnr, region_agreement, ssim
from .sampler import invert
from .schedule import make_schedule
from .tokens import BENCHMARK_SEED_RANGE, split_part_name
from .unet import MiniUNet
from . import rng
from . import tensor as T

log = logging.getLogger(__name__)

BENCH_SEED_BASE = BENCHMARK_SEED_RANGE[0]

# category -> sampling weight, in tie-break order
CATEGORY_WEIGHTS: tuple[tuple[str, int], ...] = (
    ("creature-quadruped", 5),
    ("creature-biped", 4),
    ("stool", 2),
    ("cart", 2),
)


def apportion(weights: tuple[tuple[str, int], ...], total: int) -> dict[str, int]:
    """Largest-remainder seat allocation of `total` over weighted categories."""
    if total < len(weights):
        raise ValueError(f"need at least {len(weights)} cases, got {total}")
    denom = sum(w for _, w in weights)
    quotas = [(name, Fraction(total * w, denom)) for name, w in weights]
    counts = {name: int(q) for name, q in quotas}
    leftover = total - sum(counts.values())
    by_remainder = sorted(
        range(len(quotas)), key=lambda i: (quotas[i][1] - int(quotas[i][1]), -i), reverse=True
    )
    for i in by_remainder[:leftover]:
        counts[quotas[i][0]] += 1
    return counts


@dataclass
class BenchmarkCase:
    """One requested edit: a rendered source scene and a target attribute."""

    case_id: str
    spec: scenes.SceneSpec
    part: str  # part token name, e.g. creature-head
    source_attr: str
    target_attr: str
    gt_mask: np.ndarray = field(repr=False)  # bool (32, 32), from render_scene
    source_image: np.ndarray = field(repr=False)  # (32, 32, 3) in [0, 1]
    edit_prompt: list[str] = field(default_factory=list)

    def manifest_row(self) -> dict:
        return {
            "case_id": self.case_id,
            "spec": json.loads(self.spec.to_json()),
            "part": self.part,
            "source_attr": self.source_attr,
            "target_attr": self.target_attr,
            "edit_prompt": self.edit_prompt,
        }


def _case_from_row(row: dict) -> BenchmarkCase:
    spec = scenes.SceneSpec.from_json(json.dumps(row["spec"]))
    return _make_case(row["case_id"], spec, row["part"], row["target_attr"])


def _make_case(case_id: str, spec: scenes.SceneSpec, part: str, target: str) -> BenchmarkCase:
    _, word = split_part_name(part)
    scene = scenes.render_scene(spec)
    slot = spec.parts.index(word)
    job = EditJob(
        source_prompt=spec.prompt_tokens(), edit_attrs={part: target}, seed=spec.seed
    )
    return BenchmarkCase(
        case_id=case_id,
        spec=spec,
        part=part,
        source_attr=spec.attrs[slot],
        target_attr=target,
        gt_mask=scene.masks[word].astype(bool),
        source_image=scene.image,
        edit_prompt=edit_prompt_tokens(job),
    )


def generate_benchmark(n_cases: int = 60, seed: int = BENCH_SEED_BASE) -> list[BenchmarkCase]:
    """Deterministic benchmark with largest-remainder category proportions."""
    lo, hi = BENCHMARK_SEED_RANGE
    if not lo <= seed < hi:
        raise ValueError(f"benchmark seed {seed} outside the reserved range [{lo}, {hi})")
    counts = apportion(CATEGORY_WEIGHTS, n_cases)
    need = dict(counts)
    cases: list[BenchmarkCase] = []
    cursor = seed
    while len(cases) < n_cases:
        if cursor >= hi:
            raise ValueError(f"ran out of reserved benchmark seeds before {n_cases} cases")
        spec = scenes.sample_scene_spec(cursor)
        cursor += 1
        if need.get(spec.category, 0) == 0:
            continue
        need[spec.category] -= 1
        g = rng.stream(spec.seed, "bench-edit")
        word = spec.parts[g.integers(len(spec.parts))]
        part = scenes.part_token_name(spec.kind, word)
        slot = spec.parts.index(word)
        choices = [a for a in scenes.edit_attr_choices(part) if a != spec.attrs[slot]]
        target = choices[g.integers(len(choices))]
        cases.append(_make_case(f"case-{len(cases):03d}", spec, part, target))
    return cases


def save_benchmark(path: str | Path, cases: list[BenchmarkCase]) -> None:
    lines = [json.dumps(c.manifest_row(), sort_keys=True) for c in cases]
    container.atomic_write_text(Path(path), "\n".join(lines) + "\n")


def load_benchmark(path: str | Path) -> list[BenchmarkCase]:
    rows = [json.loads(line) for line in Path(path).read_text().splitlines() if line]
    return [_case_from_row(row) for row in rows]


# ------------------------------------------------------------------ methods

@dataclass
class CaseOutput:
    """One method's product for one case: the image, optionally its mask."""

    image: np.ndarray  # (32, 32, 3) in [0, 1]
    pred_mask: np.ndarray | None = None  # bool (32, 32)


def null_outputs(benchmark: list[BenchmarkCase]) -> dict[str, CaseOutput]:
    """The no-edit method: every output is the source image."""
    return {c.case_id: CaseOutput(image=c.source_image.copy()) for c in benchmark}


def oracle_outputs(benchmark: list[BenchmarkCase]) -> dict[str, CaseOutput]:
    """Upper-bound method: paint the ground-truth region with the canonical target."""
    out = {}
    for c in benchmark:
        img = c.source_image.copy()
        img[c.gt_mask] = canonical_patch(c.target_attr)[c.gt_mask]
        out[c.case_id] = CaseOutput(image=img, pred_mask=c.gt_mask.copy())
    return out


def predicted_mask(result: EditResult) -> np.ndarray:
    """Binarize the final step's aggregated maps (OTSU split, OR over parts)."""
    rec = result.masks[-1]
    combined = np.zeros((scenes.SIZE, scenes.SIZE), dtype=bool)
    for part in result.parts:
        m = rec.aggregated[part]
        k, degenerate = otsu_threshold(m)
        if not degenerate:
            combined |= m >= k
    return combined


def case_job(case: BenchmarkCase, net: MiniUNet, table, t_e: int, guidance: float,
             omega_factor: float, padding: str, binarize: str, T_steps: int) -> EditJob:
    """Invert the rendered source and wrap it into an edit job."""
    sched = make_schedule(T_steps)
    x0 = scenes.model_space(case.source_image).transpose(2, 0, 1)
    with T.no_grad():
        ctx_c = text.encode_prompt(case.spec.prompt_tokens(), table).data
        ctx_u = text.encode_prompt(text.null_prompt_tokens(), table).data
    traj = invert(net, sched, x0, ctx_c, ctx_u)
    return EditJob(
        source_prompt=case.spec.prompt_tokens(),
        edit_attrs={case.part: case.target_attr},
        trajectory=traj,
        t_e=t_e,
        omega_factor=omega_factor,
        guidance=guidance,
        padding=padding,
        T=T_steps,
        binarize=binarize,
    )


def run_benchmark(
    net: MiniUNet,
    table,
    token_store,
    benchmark: list[BenchmarkCase],
    t_e: int = 50,
    guidance: float = 7.5,
    omega_factor: float = 1.5,
    padding: str = "bg",
    binarize: str = "adaptive",
    T_steps: int = 50,
) -> dict[str, CaseOutput]:
    """Edit every case through the inversion pathway; deterministic."""
    out: dict[str, CaseOutput] = {}
    for i, case in enumerate(benchmark):
        job = case_job(case, net, table, t_e, guidance, omega_factor, padding, binarize, T_steps)
        result = run_multi_part_edit(net, table, token_store, job)
        out[case.case_id] = CaseOutput(image=result.image, pred_mask=predicted_mask(result))
        log.info("bench %d/%d %s: %s -> %s", i + 1, len(benchmark), case.case_id,
                 case.source_attr, case.target_attr)
    return out


def save_outputs(path: str | Path, outputs: dict[str, CaseOutput], meta: dict | None = None) -> None:
    ids = sorted(outputs)
    arrays = {"images": np.stack([outputs[i].image for i in ids])}
    has_masks = [i for i in ids if outputs[i].pred_mask is not None]
    if has_masks != ids and has_masks:
        raise ValueError("either every case output carries a mask or none does")
    if has_masks:
        arrays["masks"] = np.stack([outputs[i].pred_mask for i in ids]).astype(np.float64)
    container.save_tensors(path, arrays, {"kind": "bench-outputs", "case_ids": ids, **(meta or {})})


def load_outputs(path: str | Path) -> dict[str, CaseOutput]:
    arrays, meta = container.load_tensors(path)
    if meta.get("kind") != "bench-outputs":
        raise ValueError(f"{path}: not a bench-outputs container (kind={meta.get('kind')!r})")
    ids = meta["case_ids"]
    masks = arrays.get("masks")
    return {
        cid: CaseOutput(
            image=arrays["images"][i],
            pred_mask=masks[i].astype(bool) if masks is not None else None,
        )
        for i, cid in enumerate(ids)
    }


# --------------------------------------------------------------- evaluation

AGGREGATE_KEYS = ("fg", "bg", "bg_psnr", "bg_ssim", "avg", "miou")


@dataclass
class EvalReport:
    rows: list[dict]
    aggregate: dict
    failed: list[str]

    def to_json(self) -> str:
        return json.dumps(
            {"aggregate": self.aggregate, "failed": self.failed, "cases": self.rows},
            indent=1,
            sort_keys=True,
        )


def evaluate(outputs: dict[str, CaseOutput], benchmark: list[BenchmarkCase]) -> EvalReport:
    """Score each case's edited region and untouched region; means over cases."""
    rows: list[dict] = []
    failed: list[str] = []
    for case in benchmark:
        got = outputs.get(case.case_id)
        if got is None:
            failed.append(case.case_id)
            continue
        bg = ~case.gt_mask
        row = {
            "case_id": case.case_id,
            "part": case.part,
            "target_attr": case.target_attr,
            "fg": masked_agreement(got.image, case.gt_mask, case.target_attr),
            "bg": region_agreement(got.image, case.source_image, bg),
            "bg_psnr": psnr(got.image, case.source_image, bg),
            "bg_ssim": ssim(got.image, case.source_image, bg),
            "miou": None if got.pred_mask is None else iou(got.pred_mask, case.gt_mask),
        }
        row["avg"] = (row["fg"] + row["bg"]) / 2.0
        rows.append(row)
    aggregate = {}
    for key in AGGREGATE_KEYS:
        vals = [r[key] for r in rows if r[key] is not None]
        aggregate[key] = float(np.mean(vals)) if vals else None
    aggregate["n_cases"] = len(benchmark)
    aggregate["n_evaluated"] = len(rows)
    aggregate["n_failed"] = len(failed)
    return EvalReport(rows=rows, aggregate=aggregate, failed=sorted(failed))


_COLUMNS = (
    ("fg", "FG", "{:7.2f}"),
    ("bg", "BG", "{:7.2f}"),
    ("bg_psnr", "PSNR", "{:7.2f}"),
    ("bg_ssim", "SSIM", "{:7.4f}"),
    ("avg", "avg(FG,BG)", "{:10.2f}"),
    ("miou", "mIoU", "{:6.3f}"),
)


def format_report(report: EvalReport, title: str = "benchmark") -> str:
    """Aligned text table: edited region, unedited region, then averages."""
    head = f"{'case':<24}" + "  ".join(h.rjust(len(f.format(0))) for _, h, f in _COLUMNS)
    lines = [title, head, "-" * len(head)]

    def fmt_row(label: str, row: dict) -> str:
        cells = []
        for key, _, f in _COLUMNS:
            v = row.get(key)
            cells.append("-".rjust(len(f.format(0))) if v is None else f.format(v))
        return f"{label:<24}" + "  ".join(cells)

    for row in report.rows:
        lines.append(fmt_row(f"{row['case_id']} {row['part']}", row))
    lines.append("-" * len(head))
    lines.append(fmt_row(f"mean over {report.aggregate['n_evaluated']}", report.aggregate))
    if report.failed:
        lines.append(f"failed: {', '.join(report.failed)}")
    return "\n".join(lines)
