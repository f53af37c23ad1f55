import string

import pytest
from hypothesis import given, strategies as st

from emopolar.text import (CLS, PAD, RESERVED, UNK, ConfigError, Vocabulary, build_vocab, decode,
                           encode, preprocess, tokenize)


def test_preprocess_examples():
    assert preprocess("Hello\u0000 World") == "hello world"
    assert preprocess("") == ""
    assert preprocess("  A\t B ") == "a b"
    assert preprocess("x\x07y\x1fz") == "xyz"


def test_tokenize_examples():
    assert tokenize("nice, this is slick") == ["nice", ",", "this", "is", "slick"]
    assert tokenize("") == []
    assert tokenize("tests {face-screaming-in-fear}") == ["tests", "{face-screaming-in-fear}"]
    assert tokenize("great:smile:!") == ["great", ":smile:", "!"]
    assert tokenize("(wow)") == ["(", "wow", ")"]
    assert tokenize("don't") == ["don't"]


def test_build_vocab_examples():
    v = build_vocab([["a", "a", "b"]], min_freq=2)
    assert "a" in v and "b" not in v
    assert build_vocab([["x", "y", "z"]]).itos == RESERVED
    tie = build_vocab([["zeta", "alpha", "zeta", "alpha", "mid", "mid", "mid"]])
    assert tie.itos[3:] == ("mid", "alpha", "zeta")
    with pytest.raises(ConfigError):
        build_vocab([])


def test_max_size_counts_reserved():
    v = build_vocab([list("abcdef") * 3], min_freq=1, max_size=5)
    assert len(v) == 5 and v.itos[3:] == ("a", "b")


def test_encode_examples():
    v = build_vocab([["good", "good", "code"]], min_freq=1)
    pair = encode(["good", "code", "mystery"], v, max_len=8)
    assert pair.polarity_len == 0
    assert pair.primary_ids[:4] == (CLS, v.id("good"), v.id("code"), UNK)
    assert pair.primary_ids[4:] == (PAD,) * 4 and pair.primary_len == 4
    long = encode(["good"] * 100, v)
    assert long.primary_len == 64 and len(long.primary_ids) == 64


def test_polarity_ids_dedup_and_cap():
    words = [f"w{i}" for i in range(30)]
    v = build_vocab([words, words], min_freq=1)
    pair = encode(words, v, polarity_words=["w3", "w1", "w3"] + words)
    assert pair.polarity_ids[:2] == (v.id("w3"), v.id("w1"))
    assert pair.polarity_len == 16 and len(set(pair.polarity_ids)) == 16
    oov = encode(["x"], v, polarity_words=["nope", "never"])
    assert oov.polarity_ids == (UNK,)


def test_vocab_file_roundtrip(tmp_path):
    v = build_vocab([["b", "a", "b", "a", "c"]], min_freq=1)
    path = tmp_path / "vocab.txt"
    v.save(path)
    assert path.read_text(encoding="utf-8").splitlines()[:3] == list(RESERVED)
    back = Vocabulary.load(path)
    assert back.itos == v.itos and back.digest() == v.digest()


def test_test_only_tokens_map_to_unk():
    train = [tokenize("the build passes"), tokenize("the build fails")]
    v = build_vocab(train, min_freq=1)
    pair = encode(tokenize("the deploy fails"), v, max_len=8)
    assert pair.primary_ids[2] == UNK


words = st.text(alphabet=string.ascii_lowercase, min_size=1, max_size=6)


@given(st.lists(st.lists(words, max_size=12), min_size=1, max_size=10), st.integers(2, 20))
def test_encode_deterministic_and_decode_roundtrip(corpus, max_len):
    v = build_vocab(corpus, min_freq=1)
    for doc in corpus:
        a, b = encode(doc, v, max_len=max_len), encode(doc, v, max_len=max_len)
        assert a == b
        assert 1 <= a.primary_len <= max_len and all(i < len(v) for i in a.primary_ids)
        assert decode(a, v) == doc[: max_len - 1]


@given(st.lists(st.lists(words, max_size=8), min_size=1, max_size=8), st.integers(1, 3))
def test_vocab_bijective_and_frequency_sorted(corpus, min_freq):
    v = build_vocab(corpus, min_freq=min_freq)
    assert v.itos[:3] == RESERVED
    assert all(v.id(t) == i for i, t in enumerate(v.itos))
    counts = {}
    for doc in corpus:
        for t in doc:
            counts[t] = counts.get(t, 0) + 1
    body = v.itos[3:]
    assert set(body) == {t for t, c in counts.items() if c >= min_freq}
    keys = [(-counts[t], t) for t in body]
    assert keys == sorted(keys)


@given(st.text(max_size=60))
def test_preprocess_idempotent(text):
    once = preprocess(text)
    assert preprocess(once) == once
    assert not any(ord(c) < 32 for c in once)
