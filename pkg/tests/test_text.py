import numpy as np
import pytest

from partlab import text
from partlab.tensor import Tensor


def test_vocabulary_is_closed_and_unique():
    assert len(set(text.VOCAB)) == len(text.VOCAB)
    assert text.PAD in text.VOCAB and text.SOT in text.VOCAB
    for tok in ("creature", "cart", "stool", "quadruped", "biped", "with"):
        assert tok in text.VOCAB


def test_token_ids_pads_to_context_length():
    ids = text.token_ids(["<sot>", "cart"])
    assert len(ids) == text.CONTEXT_LEN
    assert ids[0] == text.TOKEN_ID["<sot>"]
    assert ids[1] == text.TOKEN_ID["cart"]
    assert all(i == text.TOKEN_ID[text.PAD] for i in ids[2:])


def test_token_ids_rejects_unknown_and_overflow():
    with pytest.raises(ValueError, match="unknown"):
        text.token_ids(["camel"])
    with pytest.raises(ValueError, match="limit"):
        text.token_ids(["red"] * 9)


def test_null_prompt_is_all_padding():
    ids = text.token_ids(text.null_prompt_tokens())
    assert np.array_equal(ids, [text.TOKEN_ID[text.PAD]] * text.CONTEXT_LEN)


def test_encode_prompt_shape_and_determinism():
    table = text.init_embedding_table(seed=0)
    a = text.encode_prompt(["<sot>", "stool"], table)
    b = text.encode_prompt(["<sot>", "stool"], table)
    assert a.data.shape == (text.CONTEXT_LEN, text.D_EMBED)
    assert np.array_equal(a.data, b.data)


def test_encode_prompt_single_slot_locality():
    # changing one token changes exactly that row of the encoded prompt
    table = text.init_embedding_table(seed=0)
    a = text.encode_prompt(["<sot>", "creature", "quadruped", "sky", "red"], table)
    b = text.encode_prompt(["<sot>", "creature", "quadruped", "sky", "blue"], table)
    diff = np.abs(a.data - b.data).sum(axis=1)
    assert diff[4] > 0
    assert np.all(diff[:4] == 0) and np.all(diff[5:] == 0)


def test_position_encoding_distinguishes_repeated_tokens():
    table = text.init_embedding_table(seed=0)
    enc = text.encode_prompt(["red", "red"], table)
    assert not np.allclose(enc.data[0], enc.data[1])


def test_embedding_table_gradients_flow():
    table = text.init_embedding_table(seed=0)
    assert isinstance(table, Tensor) and table.requires_grad
    enc = text.encode_prompt(["<sot>", "cart"], table)
    from partlab.tensor import backward, tsum

    backward(tsum(enc * enc))
    assert table.grad is not None
    assert np.any(table.grad[text.TOKEN_ID["cart"]] != 0)


def test_color_and_background_tables_are_valid_rgb():
    for name, rgb in {**text.COLOR_RGB, **text.BACKGROUND_RGB}.items():
        assert len(rgb) == 3, name
        assert all(0.0 <= c <= 1.0 for c in rgb), name
