"""Shared engine entry: prompt grammar, payload validation, execution parity."""

from __future__ import annotations

import base64
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from partlab import pngio
from partlab.config import EngineConfig
from partlab.engine import (
    SCHEMA_VERSION,
    EditRequest,
    Engine,
    EngineError,
    RequestError,
    load_token_store,
    parse_edit_clauses,
    parse_scene_prompt,
    request_from_payload,
    scene_prompt_text,
    token_path,
    write_outcome,
)
from partlab.scenes import ALL_PART_NAMES, SceneSpec, render_scene, sample_scene_spec

SPEC = SceneSpec(
    kind="creature", stance="quadruped", background="sky",
    attrs=("red", "blue", "green"), seed=31,
)


def scene_dict(spec: SceneSpec) -> dict:
    return json.loads(spec.to_json())


def payload(**over) -> dict:
    base = {"scene": scene_dict(SPEC), "prompt": "with golden <creature-head>", "seed": 11}
    base.update(over)
    return base


def fields_of(err: RequestError) -> set[str]:
    return {e["field"] for e in err.errors}


# ----------------------------------------------------------------- grammar


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=4999))
def test_scene_prompt_roundtrip(seed):
    spec = sample_scene_spec(seed)
    fields = parse_scene_prompt(scene_prompt_text(spec))
    assert fields == {
        "kind": spec.kind, "stance": spec.stance,
        "background": spec.background, "attrs": spec.attrs,
    }


@pytest.mark.parametrize(
    "prompt, match",
    [
        ("", "empty"),
        ("dragon sky red", "unknown kind"),
        ("creature sky red blue green", "stance"),
        ("creature quadruped lava red blue green", "background"),
        ("creature quadruped sky red blue", "3 appearance tokens"),
        ("cart dusk teal white gray", "2 appearance tokens"),
        ("creature quadruped sky red blue sky", "not an appearance attribute"),
    ],
)
def test_parse_scene_prompt_errors(prompt, match):
    with pytest.raises(ValueError, match=match):
        parse_scene_prompt(prompt)


def test_parse_edit_clauses_bare_and_full():
    bare = parse_edit_clauses("with golden <creature-head>", SPEC)
    full = parse_edit_clauses(
        "creature quadruped sky red blue green with golden <creature-head>", SPEC
    )
    assert bare == full == {"creature-head": "golden"}


def test_parse_edit_clauses_multi():
    got = parse_edit_clauses(
        "with golden <creature-head> and striped <creature-legs>", SPEC
    )
    assert got == {"creature-head": "golden", "creature-legs": "striped"}


@pytest.mark.parametrize(
    "prompt, match",
    [
        ("golden head please", "no editing clause"),
        ("creature biped sky red blue green with golden <creature-head>", "does not match"),
        ("with very golden <creature-head>", "must read"),
        ("with golden creature-head", "not a part token"),
        ("with golden <creature-tail>", "unknown part"),
        ("with sky <creature-head>", "not an appearance attribute"),
        ("with golden <creature-head> and red <creature-head>", "two clauses"),
    ],
)
def test_parse_edit_clauses_errors(prompt, match):
    with pytest.raises(ValueError, match=match):
        parse_edit_clauses(prompt, SPEC)


# -------------------------------------------------------------- validation


def test_request_defaults_from_config():
    req = request_from_payload(payload(), EngineConfig())
    assert req.edit_attrs == {"creature-head": "golden"}
    assert req.t_edit == 50 and req.steps == 50
    assert req.omega_factor == 1.5 and req.guidance == 7.5
    assert req.padding == "bg" and req.binarize == "adaptive"
    assert req.seed == 11 and req.image is None


def test_request_seed_defaults_to_scene_seed():
    body = payload()
    del body["seed"]
    assert request_from_payload(body, EngineConfig()).seed == SPEC.seed


def test_request_t_edit_follows_steps_override():
    req = request_from_payload(payload(steps=8), EngineConfig())
    assert req.steps == 8 and req.t_edit == 8


def test_request_null_means_default():
    req = request_from_payload(payload(t_edit=None, padding=None), EngineConfig())
    assert req.t_edit == 50 and req.padding == "bg"


@pytest.mark.parametrize(
    "over, field",
    [
        ({"bogus": 1}, "body"),
        ({"scene": 3}, "scene"),
        ({"scene": {**scene_dict(SPEC), "extra": 1}}, "scene"),
        ({"scene": {**scene_dict(SPEC), "kind": "dragon"}}, "scene.kind"),
        ({"scene": {**scene_dict(SPEC), "stance": None}}, "scene.stance"),
        ({"scene": {**scene_dict(SPEC), "attrs": ["red", "blue"]}}, "scene.attrs"),
        ({"scene": {**scene_dict(SPEC), "seed": -1}}, "scene.seed"),
        ({"t_edit": 0}, "t_edit"),
        ({"t_edit": 51}, "t_edit"),
        ({"t_edit": "many"}, "t_edit"),
        ({"steps": 0}, "steps"),
        ({"guidance": -1.0}, "guidance"),
        ({"omega_factor": 0.5}, "omega_factor"),
        ({"padding": "mirror"}, "padding"),
        ({"binarize": "hard"}, "binarize"),
        ({"seed": -4}, "seed"),
        ({"prompt": ""}, "prompt"),
        ({"prompt": "with golden creature-head"}, "prompt"),
        ({"image": "@@not-base64@@"}, "image"),
    ],
)
def test_request_field_errors(over, field):
    with pytest.raises(RequestError) as exc:
        request_from_payload(payload(**over), EngineConfig())
    assert field in fields_of(exc.value)


def test_stool_takes_no_stance():
    scene = {"kind": "stool", "stance": "biped", "background": "sky",
             "attrs": ["red", "blue"], "seed": 1}
    with pytest.raises(RequestError) as exc:
        request_from_payload(payload(scene=scene, prompt="with golden <stool-seat>"),
                             EngineConfig())
    assert "scene.stance" in fields_of(exc.value)


def test_errors_accumulate():
    with pytest.raises(RequestError) as exc:
        request_from_payload(payload(t_edit=0, padding="mirror"), EngineConfig())
    assert {"t_edit", "padding"} <= fields_of(exc.value)


def test_image_payload_roundtrip():
    scene = render_scene(SPEC)
    encoded = base64.b64encode(pngio.png_bytes(scene.image)).decode()
    req = request_from_payload(payload(image=encoded), EngineConfig())
    assert req.image.shape == (32, 32, 3)
    assert np.array_equal(req.image, pngio.read_png(pngio.png_bytes(scene.image)))


def test_image_wrong_size_rejected():
    encoded = base64.b64encode(pngio.png_bytes(np.zeros((8, 8, 3)))).decode()
    with pytest.raises(RequestError) as exc:
        request_from_payload(payload(image=encoded), EngineConfig())
    assert "image" in fields_of(exc.value)


def test_untrained_token_error_names_container_path():
    config = EngineConfig(token_store="some/tokens")
    with pytest.raises(RequestError) as exc:
        request_from_payload(
            payload(prompt="with golden <creature-body>"), config,
            known_tokens={"creature-head"},
        )
    messages = "; ".join(e["message"] for e in exc.value.errors)
    assert str(token_path("some/tokens", "creature-body")) in messages


# --------------------------------------------------------------- execution


@pytest.fixture(scope="module")
def edited(tiny_engine):
    request = tiny_engine.parse_request(payload())
    return request, tiny_engine.edit(request)


def test_engine_requires_checkpoint(tmp_path):
    with pytest.raises(EngineError, match="pretrain"):
        Engine(EngineConfig(checkpoint=str(tmp_path / "nowhere")))


def test_token_rows(tiny_engine):
    rows = tiny_engine.token_rows()
    assert [r["name"] for r in rows] == sorted(ALL_PART_NAMES)
    assert all(r["window"] == {"t_start": 30, "t_end": 20} for r in rows)


def test_load_token_store_skips_foreign_containers(engine_config):
    assert load_token_store(engine_config.checkpoint) == {}
    assert load_token_store("does/not/exist") == {}


def test_receipt_shape(edited, engine_config):
    request, outcome = edited
    receipt = outcome.receipt
    assert receipt["schema_version"] == SCHEMA_VERSION
    assert receipt["request"]["source"] == "seed"
    assert receipt["request"]["t_edit"] == engine_config.steps
    assert [s["t"] for s in receipt["steps"]] == list(range(engine_config.steps, 0, -1))
    assert all(s["blended"] for s in receipt["steps"])
    assert receipt["digests"]["result_png"] == (
        __import__("hashlib").sha256(pngio.png_bytes(outcome.result.image)).hexdigest()
    )
    assert receipt["meta"]["inverted_source"] is False


def test_write_outcome_artifacts(edited, tmp_path, engine_config):
    _, outcome = edited
    paths = write_outcome(outcome, tmp_path / "job")
    assert paths["result"].read_bytes() == pngio.png_bytes(outcome.result.image)
    assert paths["source"].read_bytes() == pngio.png_bytes(outcome.result.source_image)
    for t in range(1, engine_config.steps + 1):
        assert (tmp_path / "job" / "mask" / f"{t}.png").exists()
    receipt = json.loads(paths["receipt"].read_text())
    assert receipt == outcome.receipt


def test_edit_deterministic_parity(edited, tiny_engine):
    request, outcome = edited
    again = tiny_engine.edit(request)
    assert pngio.png_bytes(again.result.image) == pngio.png_bytes(outcome.result.image)
    assert again.receipt["digests"] == outcome.receipt["digests"]


def test_generate_matches_edit_source_path(edited, tiny_engine):
    _, outcome = edited
    image = tiny_engine.generate(11, scene_prompt_text(SPEC))
    assert np.array_equal(image, outcome.result.source_image)


def test_generate_rejects_edit_clause(tiny_engine):
    with pytest.raises(ValueError, match="bare scene prompt"):
        tiny_engine.generate(3, "with golden <creature-head>")


def test_image_pathway_inverts(tiny_engine):
    scene = render_scene(SPEC)
    encoded = base64.b64encode(pngio.png_bytes(scene.image)).decode()
    request = tiny_engine.parse_request(payload(image=encoded))
    outcome = tiny_engine.edit(request)
    assert outcome.receipt["request"]["source"] == "image"
    assert outcome.receipt["meta"]["inverted_source"] is True
    assert outcome.result.image.shape == (32, 32, 3)


def test_edit_missing_token_names_path(engine_config, tiny_engine, tmp_path):
    config = EngineConfig(**{**engine_config.describe(), "token_store": str(tmp_path / "empty")})
    engine = Engine(config)
    assert engine.token_names() == set()
    request = EditRequest(
        scene=SPEC, prompt="with golden <creature-head>",
        edit_attrs={"creature-head": "golden"}, t_edit=8, omega_factor=1.5,
        guidance=2.0, seed=11, padding="bg", binarize="adaptive", steps=8,
    )
    with pytest.raises(EngineError) as exc:
        engine.edit(request)
    assert str(token_path(config.token_store, "creature-head")) in str(exc.value)
