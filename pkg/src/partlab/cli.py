"""Command-line face of the engine.

Verbs mirror the repo workflow: `pretrain` the denoiser, `render-data` for
inspectable scene dumps, `train-token` for part localization, `edit`/`invert`
for single jobs, `bench` for the evaluation protocol, `ablate` for knob
sweeps, and `serve` for the HTTP console backend. Every verb accepts
`--config` (else the ENGINE_CONFIG env var) and `--seed`, and exits 2 on
usage errors, 1 on runtime failures, 0 on success.
"""

from __future__ import annotations

import argparse
import base64
import json
import re
import shutil
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import pngio, scenes, text, tokens
from .config import EngineConfig, load_engine_config
from .container import atomic_write_text
from .engine import (
    Engine,
    EngineError,
    RequestError,
    parse_scene_prompt,
    request_from_payload,
    token_path,
    write_outcome,
)
from .scenes import SceneSpec
from .training import DEFAULT_PRETRAIN, ensure_pretrained

PROG = "partlab"


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 1


def _engine(args) -> Engine:
    return Engine(load_engine_config(args.config))


def _int_list(raw: str) -> list[int]:
    return [int(v) for v in raw.split(",") if v.strip()]


def _float_list(raw: str) -> list[float]:
    return [float(v) for v in raw.split(",") if v.strip()]


# ------------------------------------------------------------------- verbs


def cmd_pretrain(args) -> int:
    config = load_engine_config(args.config)
    cfg = DEFAULT_PRETRAIN
    overrides = {
        "steps": args.steps, "batch_size": args.batch_size, "seed": args.seed,
        "n_scenes": args.scenes, "val_scenes": args.val_scenes,
    }
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    _, _, cached = ensure_pretrained(cfg, cache_root=args.cache_root)
    target = Path(config.checkpoint)
    target.mkdir(parents=True, exist_ok=True)
    for name in ("model.json", "model.json.bin", "vocab.json", "vocab.json.bin",
                 "pretrain_report.json"):
        if (cached / name).exists():
            shutil.copy2(cached / name, target / name)
    report = json.loads((target / "pretrain_report.json").read_text())
    final = report["val_history"][-1]
    print(f"checkpoint installed at {target}")
    print(f"final val cond={final['val_cond_mse']:.4f} "
          f"uncond={final['val_uncond_mse']:.4f}")
    return 0


def cmd_render_data(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    base = args.seed if args.seed is not None else tokens.TRAIN_SCENE_SEED_BASE
    lo, hi = tokens.BENCHMARK_SEED_RANGE
    if any(lo <= base + i < hi for i in range(args.count)):
        return _fail(f"seeds [{base}, {base + args.count}) intersect the reserved "
                     f"benchmark range [{lo}, {hi})")
    for i in range(args.count):
        spec = scenes.sample_scene_spec(base + i, kind=args.kind, stance=args.stance)
        scene = scenes.render_scene(spec)
        stem = f"scene-{spec.seed:06d}"
        atomic_write_text(out / f"{stem}.json", spec.to_json())
        pngio.write_png(out / f"{stem}.png", scene.image)
    print(f"wrote {args.count} scenes under {out}")
    return 0


def _specs_from_dir(images_dir: str, kind: str) -> list[SceneSpec]:
    paths = sorted(Path(images_dir).glob("scene-*.json"))
    if not paths:
        raise EngineError(f"no scene-*.json files under {images_dir}")
    specs = [SceneSpec.from_json(p.read_text()) for p in paths]
    return [s for s in specs if s.kind == kind]


def cmd_train_token(args) -> int:
    config = load_engine_config(args.config)
    engine = Engine(config)
    kind, _ = tokens.split_part_name(args.part)
    if args.images:
        specs = _specs_from_dir(args.images, kind)
        if args.count is not None:
            specs = specs[: args.count]
        train_set = tokens.build_token_set_from_specs(args.part, specs)
    else:
        count = args.count if args.count is not None else 20
        base = args.seed if args.seed is not None else tokens.TRAIN_SCENE_SEED_BASE
        train_set = tokens.build_token_set(args.part, count, seed_base=base)
    window = tuple(_int_list(args.window))
    if len(window) != 2:
        return _fail(f"--window takes 't_start,t_end', got {args.window!r}")
    cfg = tokens.TokenTrainConfig(
        steps=args.steps,
        lr=args.lr,
        lr_step=args.lr_step,
        lr_gamma=args.lr_gamma,
        seed=args.seed if args.seed is not None else 0,
        t_start=window[0],
        t_end=window[1],
        layers=tuple(_int_list(args.layers)),
        T=config.steps,
    )
    token = tokens.optimize_token(engine.net, train_set, cfg)
    path = token_path(config.token_store, token.name)
    token.save(path)
    line = f"trained {token.name} on {len(train_set)} scenes -> {path}"
    if args.eval:
        val = tokens.build_eval_set(args.part, args.eval)
        miou = tokens.eval_miou(engine.net, token, val, T_total=config.steps)
        line += f" (held-out mIoU {miou:.3f})"
    print(line)
    return 0


def _edit_payload(args, config: EngineConfig) -> dict:
    payload: dict = {"prompt": args.prompt}
    if (args.source is None) == (args.image is None):
        raise EngineError("provide exactly one of --source scene.json or --image img.png")
    if args.source is not None:
        spec = SceneSpec.from_json(Path(args.source).read_text())
        payload["scene"] = json.loads(spec.to_json())
    else:
        prefix = args.prompt.split(" with ", 1)[0]
        fields = parse_scene_prompt(prefix)
        payload["scene"] = {**fields, "attrs": list(fields["attrs"]),
                            "seed": args.seed if args.seed is not None else 0}
        payload["image"] = base64.b64encode(Path(args.image).read_bytes()).decode()
    for key, value in (
        ("t_edit", args.t_edit), ("omega_factor", args.omega),
        ("guidance", args.guidance), ("seed", args.seed),
        ("padding", args.padding), ("binarize", args.binarize),
        ("steps", args.steps),
    ):
        if value is not None:
            payload[key] = value
    return payload


def cmd_edit(args) -> int:
    config = load_engine_config(args.config)
    engine = Engine(config)
    payload = _edit_payload(args, config)
    request = request_from_payload(payload, config, engine.token_names())
    outcome = engine.edit(request)
    paths = write_outcome(outcome, args.out)
    for part in outcome.result.parts:
        if all(s["degenerate"].get(part, False) for s in outcome.receipt["steps"]):
            print(f"warning: no part found for {part!r} (degenerate mask at "
                  f"every step)", file=sys.stderr)
    print(f"result: {paths['result']}")
    print(f"receipt: {paths['receipt']}")
    return 0


def cmd_invert(args) -> int:
    from . import tensor as T
    from .container import save_tensors
    from .sampler import invert
    from .schedule import make_schedule

    config = load_engine_config(args.config)
    engine = Engine(config)
    image = pngio.read_png(args.image)
    if image.shape != (scenes.SIZE, scenes.SIZE, 3):
        return _fail(f"--image must be {scenes.SIZE}x{scenes.SIZE} RGB, got {image.shape[:2]}")
    fields = parse_scene_prompt(args.prompt)
    spec = SceneSpec(seed=args.seed if args.seed is not None else 0, **fields)
    steps = args.steps if args.steps is not None else config.steps
    sched = make_schedule(steps)
    with T.no_grad():
        ctx_c = text.encode_prompt(spec.prompt_tokens(), engine.table).data
        ctx_u = text.encode_prompt(text.null_prompt_tokens(), engine.table).data
        traj = invert(engine.net, sched, scenes.model_space(image).transpose(2, 0, 1),
                      ctx_c, ctx_u, verify=True)
    out = Path(args.out)
    save_tensors(out / "trajectory.json", {"states": traj.states, "eps": traj.eps},
                 {"kind": "trajectory", "prompt": spec.prompt_tokens(), **traj.meta})
    pngio.write_png(out / "reconstruction.png",
                    scenes.image_space(traj.x0).transpose(1, 2, 0))
    print(f"roundtrip psnr: {traj.meta['roundtrip_psnr_db']:.1f} dB")
    print(f"trajectory: {out / 'trajectory.json'}")
    return 0


def cmd_bench(args) -> int:
    if args.bench_verb == "generate":
        seed = args.seed if args.seed is not None else bench_mod.BENCH_SEED_BASE
        cases = bench_mod.generate_benchmark(args.cases, seed=seed)
        out = Path(args.out)
        bench_mod.save_benchmark(out / "manifest.jsonl", cases)
        print(f"benchmark manifest: {out / 'manifest.jsonl'} ({len(cases)} cases)")
        return 0

    benchmark = bench_mod.load_benchmark(Path(args.bench) / "manifest.jsonl")
    if args.bench_verb == "run":
        config = load_engine_config(args.config)
        engine = Engine(config)
        missing = sorted(
            {case.part for case in benchmark} - engine.token_names()
        )
        if missing:
            paths = ", ".join(str(token_path(config.token_store, m)) for m in missing)
            raise EngineError(f"no trained token container at {paths}")
        knobs = {
            "t_e": args.t_edit if args.t_edit is not None else config.resolved_t_edit,
            "guidance": args.guidance if args.guidance is not None else config.guidance,
            "omega_factor": args.omega if args.omega is not None else config.omega_factor,
            "padding": args.padding if args.padding is not None else config.padding,
            "binarize": args.binarize if args.binarize is not None else config.binarize,
            "T_steps": args.steps if args.steps is not None else config.steps,
        }
        outputs = bench_mod.run_benchmark(engine.net, engine.table, engine.tokens,
                                          benchmark, **knobs)
        out = Path(args.out)
        bench_mod.save_outputs(out / "outputs.json", outputs,
                               {"knobs": knobs, "seed": args.seed})
        report = bench_mod.evaluate(outputs, benchmark)
        atomic_write_text(out / "report.json", report.to_json())
        table_text = bench_mod.format_report(report, title=f"benchmark t_e={knobs['t_e']}")
        atomic_write_text(out / "report.txt", table_text)
        print(table_text)
        return 0

    outputs = bench_mod.load_outputs(Path(args.outputs) / "outputs.json")
    report = bench_mod.evaluate(outputs, benchmark)
    print(bench_mod.format_report(report))
    return 0


_ABLATE_KNOBS = {"omega": "omega_factor", "t-edit": "t_edit", "binarize": "binarize"}


def cmd_ablate(args) -> int:
    config = load_engine_config(args.config)
    engine = Engine(config)
    key = _ABLATE_KNOBS[args.knob]
    if args.knob == "binarize":
        values = [v.strip() for v in args.values.split(",") if v.strip()]
    elif args.knob == "t-edit":
        values = _int_list(args.values)
    else:
        values = _float_list(args.values)
    if not values:
        return _fail("--values must list at least one value")

    if args.scene is not None:
        spec = SceneSpec.from_json(Path(args.scene).read_text())
    elif not args.prompt.strip().startswith("with "):
        prefix = args.prompt.split(" with ", 1)[0]
        fields = parse_scene_prompt(prefix)
        spec = SceneSpec(seed=args.seed if args.seed is not None else 0, **fields)
    else:
        token_match = re.search(r"<([a-z]+)-[a-z]+>", args.prompt)
        if token_match is None:
            return _fail("prompt must contain a clause 'with <attribute> <kind-part>'")
        spec = scenes.sample_scene_spec(
            args.seed if args.seed is not None else tokens.EVAL_SCENE_SEED_BASE,
            kind=token_match.group(1),
        )
    base_payload = {"scene": json.loads(spec.to_json()), "prompt": args.prompt}

    rows = []
    print(f"{args.knob:>10}  {'support':>8}  {'soft-mass':>9}  {'changed-px':>10}")
    for value in values:
        payload = dict(base_payload)
        payload[key] = value
        request = request_from_payload(payload, config, engine.token_names())
        outcome = engine.edit(request)
        blended = [m for m in outcome.result.masks if m.blended]
        hard = float(np.mean([np.mean(m.combined >= 1.0) for m in blended]))
        soft = float(np.mean([np.mean(m.combined) for m in blended]))
        changed = float(np.mean(
            np.any(np.abs(outcome.result.image - outcome.result.source_image) > 1 / 255, axis=2)
        ))
        rows.append({args.knob: value, "support": round(hard, 4),
                     "soft_mass": round(soft, 4), "changed_px": round(changed, 4)})
        print(f"{value!s:>10}  {hard:8.4f}  {soft:9.4f}  {changed:10.4f}")
    if args.out:
        atomic_write_text(Path(args.out), json.dumps(rows, indent=1, sort_keys=True))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import build_app

    config = load_engine_config(args.config)
    engine = Engine(config)
    app = build_app(engine, config)
    port = args.port if args.port is not None else config.port
    uvicorn.run(app, host=args.host, port=port, log_level="warning")
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="engine config JSON (else $ENGINE_CONFIG)")
    common.add_argument("--seed", type=int, default=None, help="seed for anything this verb samples")

    parser = argparse.ArgumentParser(prog=PROG, description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("pretrain", parents=[common], help="train or fetch the denoiser checkpoint")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--scenes", type=int, default=None, help="training-set size")
    p.add_argument("--val-scenes", type=int, default=None)
    p.add_argument("--cache-root", default="var/cache")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("render-data", parents=[common], help="dump rendered scenes + spec files")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--kind", default=None, choices=sorted(scenes.PART_SLOTS))
    p.add_argument("--stance", default=None, choices=list(text.STANCE_TOKENS))
    p.set_defaults(func=cmd_render_data)

    p = sub.add_parser("train-token", parents=[common], help="optimize one part-localization token")
    p.add_argument("--part", required=True, help="part token name, e.g. creature-head")
    p.add_argument("--images", default=None, help="directory of scene-*.json specs")
    p.add_argument("--count", type=int, default=None, help="number of training scenes")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=30.0)
    p.add_argument("--lr-step", type=int, default=80)
    p.add_argument("--lr-gamma", type=float, default=0.7)
    p.add_argument("--window", default="30,20", help="t_start,t_end noise-level window")
    p.add_argument("--layers", default="0,1,2,3,4,5")
    p.add_argument("--eval", type=int, default=0, help="held-out scenes for a final mIoU")
    p.set_defaults(func=cmd_train_token)

    p = sub.add_parser("edit", parents=[common], help="run one edit job")
    p.add_argument("--source", default=None, help="scene spec JSON (generated-source path)")
    p.add_argument("--image", default=None, help="source PNG (inversion path)")
    p.add_argument("--prompt", required=True,
                   help="e.g. 'creature quadruped sky red blue green with golden <creature-head>'")
    p.add_argument("--t-edit", type=int, default=None)
    p.add_argument("--omega", type=float, default=None)
    p.add_argument("--guidance", type=float, default=None)
    p.add_argument("--padding", default=None)
    p.add_argument("--binarize", default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("invert", parents=[common], help="invert an image and verify the round trip")
    p.add_argument("--image", required=True)
    p.add_argument("--prompt", required=True, help="bare scene prompt of the image")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_invert)

    # No shared flags on the bench parser itself: a nested subparser would
    # reset them to defaults after they were already parsed.
    p = sub.add_parser("bench", help="benchmark: generate / run / report")
    bench_sub = p.add_subparsers(dest="bench_verb", required=True)
    g = bench_sub.add_parser("generate", parents=[common])
    g.add_argument("--out", required=True)
    g.add_argument("--cases", type=int, default=60)
    g.set_defaults(func=cmd_bench)
    r = bench_sub.add_parser("run", parents=[common])
    r.add_argument("--bench", required=True, help="directory holding manifest.jsonl")
    r.add_argument("--out", required=True)
    r.add_argument("--t-edit", type=int, default=None)
    r.add_argument("--guidance", type=float, default=None)
    r.add_argument("--omega", type=float, default=None)
    r.add_argument("--padding", default=None)
    r.add_argument("--binarize", default=None)
    r.add_argument("--steps", type=int, default=None)
    r.set_defaults(func=cmd_bench)
    rp = bench_sub.add_parser("report", parents=[common])
    rp.add_argument("--bench", required=True)
    rp.add_argument("--outputs", required=True, help="directory holding outputs.json")
    rp.set_defaults(func=cmd_bench)

    p = sub.add_parser("ablate", parents=[common], help="sweep one knob over a fixed edit")
    p.add_argument("knob", choices=sorted(_ABLATE_KNOBS))
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--prompt", required=True)
    p.add_argument("--scene", default=None, help="scene spec JSON (else sampled from --seed)")
    p.add_argument("--out", default=None, help="optional JSON file for the rows")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("serve", parents=[common], help="run the HTTP service")
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (RequestError, EngineError, FileNotFoundError, ValueError) as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    raise SystemExit(main())
