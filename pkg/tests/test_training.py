"""Pretraining loop: wiring oracles, trend, determinism, persistence."""

import numpy as np
import pytest

from partlab import rng, text
from partlab import tensor as T
from partlab.schedule import make_schedule
from partlab.training import (
    PretrainConfig,
    load_pretrained,
    load_vocab_table,
    make_validation_pairs,
    pretrain,
    render_training_set,
    save_pretrained,
    save_vocab_table,
    smoothed_series,
    validate,
)
from partlab.unet import MiniUNet, UNetConfig

SMALL_NET = UNetConfig(channels=(8, 16, 16))

TINY = PretrainConfig(
    steps=30, batch_size=2, lr=2e-3, seed=3, n_scenes=8, val_scenes=4, val_every=15, T=8
)


@pytest.fixture(scope="module")
def tiny_run():
    return pretrain(TINY, net=MiniUNet.init(SMALL_NET, seed=TINY.seed))


def test_render_training_set_shapes_and_range():
    images, prompts = render_training_set(6, seed_base=100_000)
    assert images.shape == (6, 3, 32, 32)
    assert images.min() >= -1.0 and images.max() <= 1.0
    assert len(prompts) == 6
    for toks in prompts:
        text.token_ids(toks)  # every prompt must be encodable


def test_encode_prompt_batch_matches_single_rows():
    table = text.init_embedding_table(seed=0)
    prompts = [["creature", "red"], [], ["stool", "blue", "legs"]]
    batch = text.encode_prompt_batch(prompts, table)
    assert batch.shape == (3, text.CONTEXT_LEN, text.D_EMBED)
    for j, toks in enumerate(prompts):
        single = text.encode_prompt(toks, table)
        assert np.array_equal(batch.data[j], single.data)


def test_first_step_loss_equals_mean_noise_power(tiny_run):
    # The output head is zero-initialized, so the first prediction is exactly
    # zero and the first loss must equal the mean squared target noise.
    eps = rng.stream(TINY.seed, "eps:1").normal(size=(TINY.batch_size, 3, 32, 32))
    assert tiny_run.history[0]["loss"] == pytest.approx(float(np.mean(eps**2)), abs=1e-12)


def test_loss_trend_decreases(tiny_run):
    losses = [h["loss"] for h in tiny_run.history]
    first, last = np.mean(losses[:8]), np.mean(losses[-8:])
    assert last < first - 0.02, f"no training signal: first={first:.4f} last={last:.4f}"


def test_validation_entries_present(tiny_run):
    assert [v["step"] for v in tiny_run.val_history] == [15, 30]
    for entry in tiny_run.val_history:
        assert entry["val_cond_mse"] > 0.0
        assert entry["val_uncond_mse"] > 0.0


def test_history_prefix_is_deterministic(tiny_run):
    short = pretrain(
        PretrainConfig(**{**TINY.describe(), "steps": 6}),
        net=MiniUNet.init(SMALL_NET, seed=TINY.seed),
    )
    want = [h["loss"] for h in tiny_run.history[:6]]
    got = [h["loss"] for h in short.history]
    assert got == want  # bit-exact replay of the same six steps


def test_non_finite_loss_aborts_with_seed():
    cfg = PretrainConfig(
        steps=12, batch_size=2, seed=7, n_scenes=4, val_scenes=2, val_every=100, T=8
    )
    net = MiniUNet.init(SMALL_NET, seed=cfg.seed)
    net.params["stem.w"].data[0, 0, 0, 0] = np.nan  # simulate a corrupted state
    with pytest.raises(RuntimeError, match=r"non-finite.*seed 7"):
        pretrain(cfg, net=net)


def test_validate_uses_fixed_pairs(tiny_run):
    sched = make_schedule(TINY.T)
    pairs_a = make_validation_pairs(TINY, sched)
    pairs_b = make_validation_pairs(TINY, sched)
    assert np.array_equal(pairs_a[0], pairs_b[0])
    assert np.array_equal(pairs_a[1], pairs_b[1])
    metrics = validate(tiny_run.net, tiny_run.table, pairs_a)
    again = tiny_run.val_history[-1]
    assert metrics["val_cond_mse"] == pytest.approx(again["val_cond_mse"], abs=1e-12)


def test_save_and_load_roundtrip(tiny_run, tmp_path):
    save_pretrained(tmp_path, tiny_run, TINY)
    net, table = load_pretrained(tmp_path)
    assert net.state_hash() == tiny_run.net.state_hash()
    assert np.array_equal(table.data, tiny_run.table.data)
    assert not table.requires_grad  # loaded weights are frozen by default
    report = (tmp_path / "pretrain_report.json").read_text()
    assert "val_cond_mse" in report


def test_vocab_container_rejects_foreign_kind(tmp_path):
    net = MiniUNet.init(SMALL_NET, seed=0)
    net.save(tmp_path / "model.json")
    with pytest.raises(ValueError, match="vocab-embedding"):
        load_vocab_table(tmp_path / "model.json")


def test_vocab_container_rejects_wrong_shape(tmp_path):
    save_vocab_table(tmp_path / "vocab.json", T.Tensor(np.zeros((3, 4))))
    with pytest.raises(ValueError, match="shape"):
        load_vocab_table(tmp_path / "vocab.json")


def test_smoothed_series_windows():
    history = [{"step": i, "loss": float(i)} for i in range(1, 11)]
    out = smoothed_series(history, window=5)
    assert np.allclose(out, [3.0, 8.0])
