"""Engine config: defaults, JSON loading, unknown-key rejection, env override."""

from __future__ import annotations

import json

import pytest

from partlab.config import (
    ENGINE_CONFIG_ENV,
    EngineConfig,
    load_engine_config,
    resolve_config_path,
)


def test_defaults():
    cfg = EngineConfig()
    assert cfg.steps == 50
    assert cfg.guidance == 7.5
    assert cfg.omega_factor == 1.5
    assert cfg.t_edit is None and cfg.resolved_t_edit == 50
    assert cfg.padding == "bg"
    assert cfg.binarize == "adaptive"
    assert cfg.workers == 1
    assert cfg.queue_depth == 4
    assert cfg.port == 8787


def test_t_edit_follows_steps_when_unset():
    assert EngineConfig(steps=30).resolved_t_edit == 30
    assert EngineConfig(steps=30, t_edit=10).resolved_t_edit == 10


def test_load_from_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"steps": 20, "t_edit": 5, "port": 9000}))
    cfg = load_engine_config(path)
    assert (cfg.steps, cfg.resolved_t_edit, cfg.port) == (20, 5, 9000)


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"stepz": 20}))
    with pytest.raises(ValueError, match="stepz"):
        load_engine_config(path)


def test_non_object_rejected(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text("[1, 2]")
    with pytest.raises(ValueError, match="JSON object"):
        load_engine_config(path)


def test_env_var_supplies_path(tmp_path, monkeypatch):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"steps": 12}))
    monkeypatch.setenv(ENGINE_CONFIG_ENV, str(path))
    assert load_engine_config().steps == 12


def test_explicit_path_beats_env(tmp_path, monkeypatch):
    env_path = tmp_path / "env.json"
    env_path.write_text(json.dumps({"steps": 12}))
    cli_path = tmp_path / "cli.json"
    cli_path.write_text(json.dumps({"steps": 7}))
    monkeypatch.setenv(ENGINE_CONFIG_ENV, str(env_path))
    assert resolve_config_path(str(cli_path)) == str(cli_path)
    assert load_engine_config(cli_path).steps == 7


def test_defaults_without_file_or_env(monkeypatch):
    monkeypatch.delenv(ENGINE_CONFIG_ENV, raising=False)
    assert load_engine_config() == EngineConfig()


@pytest.mark.parametrize(
    "kwargs, match",
    [
        ({"steps": 0}, "steps"),
        ({"t_edit": 0}, "t_edit"),
        ({"t_edit": 51}, "t_edit"),
        ({"guidance": 0.0}, "guidance"),
        ({"omega_factor": 0.9}, "omega_factor"),
        ({"padding": "mirror"}, "padding"),
        ({"binarize": "hard"}, "binarize"),
        ({"workers": 0}, "workers"),
        ({"queue_depth": 0}, "queue_depth"),
        ({"port": 0}, "port"),
    ],
)
def test_invalid_values_rejected(kwargs, match):
    with pytest.raises(ValueError, match=match):
        EngineConfig(**kwargs)


def test_describe_roundtrip():
    cfg = EngineConfig(steps=20, t_edit=5)
    assert EngineConfig(**cfg.describe()) == cfg
