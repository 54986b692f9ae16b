"""CLI verbs: exit codes, artifacts on disk, determinism, error wording."""

from __future__ import annotations

import json

import pytest

from partlab import cli, pngio, scenes
from partlab.engine import scene_prompt_text, token_path
from partlab.scenes import SceneSpec

SPEC = SceneSpec(
    kind="creature", stance="quadruped", background="sky",
    attrs=("red", "blue", "green"), seed=31,
)
EDIT_PROMPT = "with golden <creature-head>"


@pytest.fixture(scope="module")
def config_path(engine_root) -> str:
    return str(engine_root / "engine.json")


@pytest.fixture(scope="module")
def scene_file(tmp_path_factory) -> str:
    path = tmp_path_factory.mktemp("scene") / "scene.json"
    path.write_text(SPEC.to_json())
    return str(path)


def clone_config(engine_root, path, **overrides) -> str:
    body = json.loads((engine_root / "engine.json").read_text())
    body.update(overrides)
    path.write_text(json.dumps(body))
    return str(path)


# -------------------------------------------------------------- exit codes


def test_no_verb_exits_2():
    assert cli.main([]) == 2


def test_unknown_verb_exits_2():
    assert cli.main(["frobnicate"]) == 2


def test_unknown_flag_exits_2(config_path):
    assert cli.main(["edit", "--config", config_path, "--bogus"]) == 2


def test_missing_required_flag_exits_2():
    assert cli.main(["edit"]) == 2  # --prompt/--out are required


def test_missing_token_exits_1_and_names_path(engine_root, tmp_path, capsys):
    empty_store = tmp_path / "no-tokens"
    empty_store.mkdir()
    cfg = clone_config(engine_root, tmp_path / "cfg.json", token_store=str(empty_store))
    scene = tmp_path / "scene.json"
    scene.write_text(SPEC.to_json())
    code = cli.main(["edit", "--config", cfg, "--source", str(scene),
                     "--prompt", EDIT_PROMPT, "--out", str(tmp_path / "out")])
    assert code == 1
    err = capsys.readouterr().err
    assert err.startswith("error:")
    assert str(token_path(str(empty_store), "creature-head")) in err


def test_invalid_field_exits_1(config_path, scene_file, tmp_path, capsys):
    code = cli.main(["edit", "--config", config_path, "--source", scene_file,
                     "--prompt", EDIT_PROMPT, "--t-edit", "0",
                     "--out", str(tmp_path / "out")])
    assert code == 1
    assert "t_edit" in capsys.readouterr().err


def test_edit_needs_exactly_one_source(config_path, scene_file, tmp_path, capsys):
    base = ["edit", "--config", config_path, "--prompt", EDIT_PROMPT,
            "--out", str(tmp_path / "out")]
    assert cli.main(base) == 1
    assert cli.main(base + ["--source", scene_file, "--image", "x.png"]) == 1
    assert "exactly one of" in capsys.readouterr().err


# ------------------------------------------------------------ edit / invert


def test_edit_from_scene_spec_is_deterministic(config_path, scene_file, tmp_path, capsys):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        code = cli.main(["edit", "--config", config_path, "--source", scene_file,
                         "--prompt", EDIT_PROMPT, "--out", str(out)])
        assert code == 0
        outs.append(out)
    stdout = capsys.readouterr().out
    assert "result:" in stdout and "receipt:" in stdout
    receipts = [json.loads((o / "receipt.json").read_text()) for o in outs]
    assert receipts[0]["request"]["source"] == "seed"
    assert (outs[0] / "result.png").read_bytes() == (outs[1] / "result.png").read_bytes()
    for r in receipts:  # wall-clock timings are the only run-to-run variation
        r.pop("timings")
    assert receipts[0] == receipts[1]


def test_edit_from_image(config_path, tmp_path):
    image = tmp_path / "scene.png"
    pngio.write_png(image, scenes.render_scene(SPEC).image)
    out = tmp_path / "out"
    code = cli.main(["edit", "--config", config_path, "--image", str(image),
                     "--prompt", f"{scene_prompt_text(SPEC)} {EDIT_PROMPT}",
                     "--out", str(out)])
    assert code == 0
    receipt = json.loads((out / "receipt.json").read_text())
    assert receipt["request"]["source"] == "image"
    assert receipt["meta"]["inverted_source"] is True


def test_invert_roundtrip(config_path, tmp_path, capsys):
    image = tmp_path / "scene.png"
    pngio.write_png(image, scenes.render_scene(SPEC).image)
    out = tmp_path / "inv"
    code = cli.main(["invert", "--config", config_path, "--image", str(image),
                     "--prompt", scene_prompt_text(SPEC), "--out", str(out)])
    assert code == 0
    assert (out / "trajectory.json").exists()
    assert (out / "reconstruction.png").exists()
    assert "roundtrip psnr:" in capsys.readouterr().out


# -------------------------------------------------------------- render-data


def test_render_data_writes_specs_and_images(config_path, tmp_path, capsys):
    out = tmp_path / "data"
    code = cli.main(["render-data", "--config", config_path, "--out", str(out),
                     "--count", "3", "--kind", "creature", "--seed", "400"])
    assert code == 0
    assert len(list(out.glob("scene-*.json"))) == 3
    assert len(list(out.glob("scene-*.png"))) == 3
    spec = SceneSpec.from_json((out / "scene-000400.json").read_text())
    assert spec.kind == "creature" and spec.seed == 400


def test_render_data_rejects_reserved_seeds(config_path, tmp_path, capsys):
    code = cli.main(["render-data", "--config", config_path,
                     "--out", str(tmp_path / "x"), "--count", "2", "--seed", "9999"])
    assert code == 1
    assert "reserved" in capsys.readouterr().err


# -------------------------------------------------------------- train-token


def test_train_token_writes_loadable_container(engine_root, tmp_path, capsys):
    store = tmp_path / "tokens"
    cfg = clone_config(engine_root, tmp_path / "cfg.json", token_store=str(store))
    code = cli.main(["train-token", "--config", cfg, "--part", "creature-head",
                     "--steps", "3", "--count", "2", "--window", "6,3",
                     "--layers", "0,1", "--eval", "1", "--seed", "0"])
    assert code == 0
    out = capsys.readouterr().out
    assert "trained creature-head on 2 scenes" in out
    assert "mIoU" in out

    from partlab.tokens import PartToken
    token = PartToken.load(store / "creature-head.json")
    assert token.t_start == 6 and token.t_end == 3
    assert token.layers == (0, 1)
    assert token.train_count == 2


def test_train_token_from_image_dir(engine_root, tmp_path, capsys):
    data = tmp_path / "data"
    assert cli.main(["render-data", "--out", str(data), "--count", "2",
                     "--kind", "creature", "--seed", "410"]) == 0
    store = tmp_path / "tokens"
    cfg = clone_config(engine_root, tmp_path / "cfg.json", token_store=str(store))
    code = cli.main(["train-token", "--config", cfg, "--part", "creature-head",
                     "--images", str(data), "--steps", "2", "--window", "6,3"])
    assert code == 0
    assert (store / "creature-head.json").exists()


def test_train_token_bad_window_exits_1(config_path, capsys):
    code = cli.main(["train-token", "--config", config_path, "--part", "creature-head",
                     "--steps", "1", "--count", "1", "--window", "6"])
    assert code == 1
    assert "--window" in capsys.readouterr().err


# -------------------------------------------------------------------- bench


def test_bench_generate_run_report(config_path, tmp_path, capsys):
    bench_dir = tmp_path / "bench"
    assert cli.main(["bench", "generate", "--out", str(bench_dir),
                     "--cases", "4", "--seed", "10000"]) == 0
    manifest = (bench_dir / "manifest.jsonl").read_text().strip().splitlines()
    assert len(manifest) == 4

    runs = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        assert cli.main(["bench", "run", "--config", config_path,
                         "--bench", str(bench_dir), "--out", str(out)]) == 0
        runs.append(out)
    assert (runs[0] / "report.json").read_bytes() == (runs[1] / "report.json").read_bytes()
    assert (runs[0] / "outputs.json").exists()
    table = (runs[0] / "report.txt").read_text()
    assert "t_e=8" in table

    capsys.readouterr()
    assert cli.main(["bench", "report", "--bench", str(bench_dir),
                     "--outputs", str(runs[0])]) == 0
    reprint = capsys.readouterr().out
    assert "case-000" in reprint and "mean over 4" in reprint


def test_bench_generate_seed_controls_manifest(tmp_path):
    texts = {}
    for seed in ("10000", "10000", "12000"):
        out = tmp_path / f"s{seed}-{len(texts)}"
        assert cli.main(["bench", "generate", "--out", str(out),
                         "--cases", "4", "--seed", seed]) == 0
        texts.setdefault(seed, []).append((out / "manifest.jsonl").read_bytes())
    assert texts["10000"][0] == texts["10000"][1]
    assert texts["10000"][0] != texts["12000"][0]


def test_bench_run_missing_token_names_path(engine_root, tmp_path, capsys):
    bench_dir = tmp_path / "bench"
    assert cli.main(["bench", "generate", "--out", str(bench_dir),
                     "--cases", "4", "--seed", "10000"]) == 0
    store = tmp_path / "no-tokens"
    store.mkdir()
    cfg = clone_config(engine_root, tmp_path / "cfg.json", token_store=str(store))
    code = cli.main(["bench", "run", "--config", cfg,
                     "--bench", str(bench_dir), "--out", str(tmp_path / "out")])
    assert code == 1
    assert str(store) in capsys.readouterr().err


# ------------------------------------------------------------------- ablate


def test_ablate_omega_rows(config_path, tmp_path, capsys):
    rows_file = tmp_path / "rows.json"
    code = cli.main(["ablate", "omega", "--config", config_path,
                     "--values", "1.0,1.5", "--prompt", EDIT_PROMPT,
                     "--seed", "5000", "--out", str(rows_file)])
    assert code == 0
    rows = json.loads(rows_file.read_text())
    assert [r["omega"] for r in rows] == [1.0, 1.5]
    assert all({"support", "soft_mass", "changed_px"} <= set(r) for r in rows)
    stdout = capsys.readouterr().out
    assert "support" in stdout and "1.5" in stdout


def test_ablate_needs_part_clause(config_path, tmp_path, capsys):
    code = cli.main(["ablate", "omega", "--config", config_path,
                     "--values", "1.0", "--prompt", "with golden nothing"])
    assert code == 1
    assert "clause" in capsys.readouterr().err


# ----------------------------------------------------------------- pretrain


def test_pretrain_installs_checkpoint(engine_root, tmp_path, capsys):
    cfg = clone_config(engine_root, tmp_path / "cfg.json",
                       checkpoint=str(tmp_path / "ckpt"))
    code = cli.main(["pretrain", "--config", cfg, "--steps", "4", "--batch-size", "2",
                     "--scenes", "8", "--val-scenes", "2", "--seed", "3",
                     "--cache-root", str(tmp_path / "cache")])
    assert code == 0
    out = capsys.readouterr().out
    assert "checkpoint installed" in out and "final val cond=" in out
    for name in ("model.json", "model.json.bin", "vocab.json", "pretrain_report.json"):
        assert (tmp_path / "ckpt" / name).exists()
