import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mtst.tokenizer import (CLS, PAD, SEP, TokenizerError, Vocabulary, decode, encode,
                            encode_batch, train_vocab)

CORPUS = ["the cat sat on the mat", "the dog sat on the log", "你好世界 你好", "cats and dogs"] * 5


@pytest.fixture(scope="module")
def vocab():
    return train_vocab(CORPUS, 300)


def test_specials_fixed(vocab):
    assert vocab.specials == {"[PAD]": 0, "[UNK]": 1, "[CLS]": 2, "[SEP]": 3}


def test_size_bounded(vocab):
    assert 260 < vocab.size <= 300


def test_deterministic():
    assert train_vocab(CORPUS, 300).merges == train_vocab(CORPUS, 300).merges


def test_seed_does_not_change_merges():
    assert train_vocab(CORPUS, 300, seed=1).merges == train_vocab(CORPUS, 300, seed=2).merges


def test_frequent_words_become_single_tokens(vocab):
    assert len(vocab.tokenize(" the")) == 1


def test_target_size_too_small():
    with pytest.raises(TokenizerError):
        train_vocab(CORPUS, 260)


def test_encode_layout(vocab):
    seq = encode("the cat", vocab, n_max=16)
    n = seq.true_length
    assert seq.ids[0] == CLS and seq.ids[n - 1] == SEP
    assert (seq.ids[n:] == PAD).all()
    assert seq.attention_mask.sum() == n


def test_truncation(vocab):
    seq = encode("the cat sat on the mat " * 20, vocab, n_max=8)
    assert seq.true_length == 8
    assert seq.ids[-1] == SEP


def test_encode_batch_shapes(vocab):
    ids, mask = encode_batch(["a", "the dog"], vocab, 10)
    assert ids.shape == mask.shape == (2, 10)


def test_decode_strict_rejects_out_of_range(vocab):
    with pytest.raises(TokenizerError):
        decode(np.array([CLS, vocab.size + 5, SEP]), vocab)


def test_decode_replace(vocab):
    assert decode(np.array([CLS, vocab.size + 5, SEP]), vocab, errors="replace") == "�"


def test_json_roundtrip(vocab, tmp_path):
    vocab.save(tmp_path / "v.json")
    back = Vocabulary.load(tmp_path / "v.json")
    assert back.merges == vocab.merges
    assert back.tokenize("the cats") == vocab.tokenize("the cats")


def test_json_rejects_bad_specials(vocab):
    obj = vocab.to_json()
    obj["specials"] = {"[PAD]": 1}
    with pytest.raises(TokenizerError):
        Vocabulary.from_json(obj)


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=40))
def test_roundtrip_unicode(vocab, text):
    # byte fallback means any text survives when it fits
    seq = encode(text, vocab, n_max=4 * len(text.encode()) + 2 if text else 3)
    assert decode(seq, vocab) == text
