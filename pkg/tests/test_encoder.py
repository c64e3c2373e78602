"""Tokenizer, vocabulary construction, and mean-pooled encoding."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wot import tensor as T
from wot.encoder import (
    UNK,
    Vocab,
    build_vocab,
    encode,
    text_ids,
    tokenize,
)
from wot.tasks import gen_syllogism


def test_tokenize_numbers_and_punctuation():
    assert tokenize("2, 4, 8") == ["2", ",", "4", ",", "8"]


def test_tokenize_digit_splitting():
    assert tokenize("40 apples") == ["4", "0", "apples"]


def test_tokenize_lowercases():
    assert tokenize("Bloops ARE Razzies") == ["bloops", "are", "razzies"]


def test_tokenize_empty():
    assert tokenize("") == []


@given(st.text(max_size=60))
@settings(max_examples=80, deadline=None)
def test_tokenize_idempotent_on_own_output(text):
    toks = tokenize(text)
    assert tokenize(" ".join(toks)) == toks


def test_build_vocab_frequency_then_lexicographic():
    vocab = build_vocab(["a b", "a"])
    assert vocab.id_to_token[:4] == ("<pad>", "<unk>", "a", "b")


def test_build_vocab_cap_reserved_only():
    vocab = build_vocab(["a b c"], cap=2)
    assert len(vocab) == 2
    assert vocab.ids(tokenize("a b c")) == [UNK, UNK, UNK]


def test_build_vocab_deterministic_bytes():
    corpus = ["the quick fox", "the slow fox", "a fox"]
    assert build_vocab(corpus).to_json() == build_vocab(corpus).to_json()


def test_build_vocab_empty_corpus_errors():
    with pytest.raises(ValueError, match="empty"):
        build_vocab([])


def test_generator_corpus_covers_canonical_syllogism():
    corpus = [s.text for s in gen_syllogism(0, 400)]
    vocab = build_vocab(corpus)
    sentence = ("If all Bloops are Razzies and all Razzies are Lazzies, "
                "are all Bloops definitely Lazzies?")
    ids = text_ids(sentence, vocab)
    assert ids and UNK not in ids


def test_vocab_round_trips_through_json():
    vocab = build_vocab(["x y z"])
    again = Vocab.from_json(vocab.to_json())
    assert again.id_to_token == vocab.id_to_token


def _table(rng, rows, dim):
    return T.Tensor(rng.standard_normal((rows, dim)), requires_grad=True)


def test_encode_single_token_is_embedding_row():
    rng = np.random.default_rng(0)
    table = _table(rng, 6, 4)
    out = encode([[3]], table)
    np.testing.assert_array_equal(out.data[0], table.data[3])


def test_encode_duplicate_tokens_match_single():
    rng = np.random.default_rng(1)
    table = _table(rng, 6, 4)
    one = encode([[2]], table)
    two = encode([[2, 2]], table)
    np.testing.assert_allclose(one.data, two.data, atol=1e-15)


def test_encode_matches_direct_row_average():
    rng = np.random.default_rng(2)
    table = _table(rng, 10, 5)
    ids = [4, 1, 7, 7, 2]
    out = encode([ids], table)
    np.testing.assert_allclose(out.data[0], table.data[ids].mean(axis=0),
                               atol=1e-12)


def test_encode_permutation_invariant():
    rng = np.random.default_rng(3)
    table = _table(rng, 10, 5)
    a = encode([[1, 2, 3, 4]], table)
    b = encode([[4, 2, 1, 3]], table)
    np.testing.assert_allclose(a.data, b.data, atol=1e-15)


def test_encode_gradient_hits_only_used_rows():
    rng = np.random.default_rng(4)
    table = _table(rng, 8, 3)
    g = T.ComputationGraph()
    with g:
        out = encode([[1, 5], [5, 5, 2]], table)
        loss = T.sum_all(out)
    T.backward(loss, g)
    used = {1, 2, 5}
    for row in range(8):
        if row in used:
            assert np.any(table.grad[row] != 0.0)
        else:
            np.testing.assert_array_equal(table.grad[row], np.zeros(3))


def test_encode_empty_id_list_errors():
    table = _table(np.random.default_rng(0), 4, 2)
    with pytest.raises(ValueError):
        encode([[]], table)
    with pytest.raises(ValueError):
        encode([], table)


def test_encode_id_out_of_range_errors():
    table = _table(np.random.default_rng(0), 4, 2)
    with pytest.raises(T.ShapeError, match="out of range"):
        encode([[4]], table)
