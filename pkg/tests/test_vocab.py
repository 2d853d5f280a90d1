"""Token inventory and id mapping."""

import pytest

from hintsr.expr import UnknownToken
from hintsr.vocab import (
    MAX_COMPLEXITY,
    MAX_POINTERS,
    MAX_VARS,
    complexity_token,
    default_vocabulary,
    pointer_token,
    symmetry_token,
    useful_symmetry_subsets,
)


def test_vocabulary_size_is_fixed():
    vocab = default_vocabulary()
    assert len(vocab.tokens) == 109
    assert len(set(vocab.tokens)) == 109


def test_specials_and_structure():
    vocab = default_vocabulary()
    for tok in ("<pad>", "<sos>", "<eos>", "<sep>", "<cond>"):
        assert tok in vocab.tokens
    assert vocab.pad_id == vocab.id_of("<pad>")
    assert vocab.token_of(vocab.eos_id) == "<eos>"
    for i in range(MAX_POINTERS):
        assert pointer_token(i) in vocab.tokens
    for k in range(1, MAX_COMPLEXITY + 1):
        assert complexity_token(k) in vocab.tokens
    for d in range(2, MAX_VARS + 1):
        assert f"x{d}" in vocab.tokens


def test_encode_decode_round_trip():
    vocab = default_vocabulary()
    toks = ["<sos>", "mul", "x3", "sin", "add", "x1", "x2", "<eos>"]
    assert vocab.decode(vocab.encode(toks)) == toks
    with pytest.raises(UnknownToken):
        vocab.id_of("nonsense")


def test_expression_token_ids_cover_decodable_set():
    vocab = default_vocabulary()
    ids = vocab.expression_token_ids
    assert vocab.id_of("add") in ids
    assert vocab.id_of("c") in ids
    assert vocab.id_of("pointer_9") in ids
    assert vocab.id_of("<pad>") not in ids
    assert vocab.id_of("Complexity=6") not in ids


def test_is_pointer():
    vocab = default_vocabulary()
    assert vocab.is_pointer(vocab.id_of("pointer_0"))
    assert not vocab.is_pointer(vocab.id_of("x1"))


def test_useful_symmetry_subsets_counts():
    # proper subsets only: d=2 has none (k <= d-1 excludes the pair itself)
    assert useful_symmetry_subsets(2) == []
    assert useful_symmetry_subsets(3) == [(1, 2), (2, 3), (1, 3)]
    assert len(useful_symmetry_subsets(5)) == 25
    for subset in useful_symmetry_subsets(5):
        assert 2 <= len(subset) <= 4
        assert symmetry_token(subset, True).startswith("TrueSymmetry")


def test_symmetry_tokens_in_vocabulary():
    vocab = default_vocabulary()
    for subset in useful_symmetry_subsets(5):
        assert symmetry_token(subset, True) in vocab.tokens
        assert symmetry_token(subset, False) in vocab.tokens
