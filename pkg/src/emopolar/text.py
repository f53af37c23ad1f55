"""Preprocessing, word tokenization and vocabulary handling."""

from __future__ import annotations

import hashlib
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

PAD, UNK, CLS = 0, 1, 2
RESERVED = ("[PAD]", "[UNK]", "[CLS]")
MAX_POLARITY = 16

_CONTROL = re.compile(r"[\x00-\x08\x0b-\x1f]")
_SPACE = re.compile(r"\s+")
_PUNCT = frozenset(string.punctuation)
_SHORTCODE_BODY = r"[^\s:{}]+"
_SHORTCODE_FULL = re.compile(rf"(?::{_SHORTCODE_BODY}:|\{{{_SHORTCODE_BODY}\}})")
_SHORTCODE_HEAD = re.compile(rf"^(?::{_SHORTCODE_BODY}:|\{{{_SHORTCODE_BODY}\}})")
_SHORTCODE_TAIL = re.compile(rf"(?::{_SHORTCODE_BODY}:|\{{{_SHORTCODE_BODY}\}})$")


class ConfigError(ValueError):
    pass


def preprocess(text: str) -> str:
    """Lowercase, drop C0 control characters (keeping tab/newline), squeeze whitespace."""
    text = _CONTROL.sub("", text.lower())
    return _SPACE.sub(" ", text).strip()


def _split_chunk(chunk: str) -> list[str]:
    if _SHORTCODE_FULL.fullmatch(chunk):
        return [chunk]
    head: list[str] = []
    while chunk:
        m = _SHORTCODE_HEAD.match(chunk)
        if m:
            head.append(m.group(0))
            chunk = chunk[m.end():]
        elif chunk[0] in _PUNCT:
            head.append(chunk[0])
            chunk = chunk[1:]
        else:
            break
    tail: list[str] = []
    while chunk:
        m = _SHORTCODE_TAIL.search(chunk)
        if m:
            tail.append(m.group(0))
            chunk = chunk[:m.start()]
        elif chunk[-1] in _PUNCT:
            tail.append(chunk[-1])
            chunk = chunk[:-1]
        else:
            break
    return head + ([chunk] if chunk else []) + tail[::-1]


def tokenize(text: str) -> list[str]:
    """Whitespace split, then peel edge punctuation; ``:name:`` and ``{name}`` stay whole."""
    tokens: list[str] = []
    for chunk in text.split():
        tokens.extend(_split_chunk(chunk))
    return tokens


@dataclass(frozen=True)
class Vocabulary:
    itos: tuple[str, ...]
    stoi: dict[str, int] = field(compare=False, repr=False)

    @classmethod
    def from_tokens(cls, tokens: Sequence[str]) -> "Vocabulary":
        itos = tuple(tokens)
        if itos[:3] != RESERVED:
            raise ConfigError(f"vocabulary must start with {RESERVED}, got {itos[:3]}")
        stoi = {t: i for i, t in enumerate(itos)}
        if len(stoi) != len(itos):
            raise ConfigError("duplicate tokens in vocabulary")
        return cls(itos, stoi)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def token(self, idx: int) -> str:
        return self.itos[idx]

    def to_text(self) -> str:
        return "".join(t + "\n" for t in self.itos)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8", newline="\n") as fh:
            lines = fh.read().split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls.from_tokens(lines)

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()


def build_vocab(corpus: Iterable[Sequence[str]], min_freq: int = 2, max_size: int = 8000) -> Vocabulary:
    """Frequency-ranked vocabulary; ties go to the lexicographically smaller token.

    ``max_size`` bounds the total size, reserved entries included.
    """
    corpus = list(corpus)
    if not corpus:
        raise ConfigError("cannot build a vocabulary from an empty corpus")
    if max_size < len(RESERVED):
        raise ConfigError(f"max_size must be at least {len(RESERVED)}")
    counts = Counter(tok for doc in corpus for tok in doc)
    for r in RESERVED:
        counts.pop(r, None)
    kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    return Vocabulary.from_tokens(RESERVED + tuple(kept[: max_size - len(RESERVED)]))


@dataclass(frozen=True)
class TokenizedPair:
    primary_ids: tuple[int, ...]
    primary_len: int
    polarity_ids: tuple[int, ...]

    @property
    def polarity_len(self) -> int:
        return len(self.polarity_ids)


def encode(tokens: Sequence[str], vocab: Vocabulary, polarity_words: Sequence[str] = (),
           max_len: int = 64, max_polarity: int = MAX_POLARITY) -> TokenizedPair:
    ids = [CLS] + [vocab.id(t) for t in tokens]
    ids = ids[:max_len]
    n = len(ids)
    pol: list[int] = []
    for w in polarity_words:
        i = vocab.id(w)
        # out-of-vocabulary polarity words collapse onto one UNK slot
        if i not in pol:
            pol.append(i)
        if len(pol) == max_polarity:
            break
    return TokenizedPair(tuple(ids + [PAD] * (max_len - n)), n, tuple(pol))


def decode(pair: TokenizedPair, vocab: Vocabulary) -> list[str]:
    return [vocab.token(i) for i in pair.primary_ids[1:pair.primary_len]]
