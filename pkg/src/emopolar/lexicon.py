"""SentiWordNet-format lexicon parsing, coarse POS tagging and polarity word extraction."""

from __future__ import annotations

import io
import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, TextIO

POS_TAGS = ("n", "v", "a", "r")
OTHER = "other"
DEFAULT_TAU = 0.1


class LexiconParseError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class LexiconEntry:
    word: str
    pos: str
    pos_score: float
    neg_score: float

    @property
    def strength(self) -> float:
        return max(self.pos_score, self.neg_score)

    @property
    def sign(self) -> str:
        return "pos" if self.pos_score >= self.neg_score else "neg"


@dataclass
class PolarityLexicon:
    entries: dict[tuple[str, str], LexiconEntry]
    by_word: dict[str, LexiconEntry] = field(init=False)
    pos_of: dict[str, frozenset[str]] = field(init=False)

    def __post_init__(self) -> None:
        grouped: dict[str, list[LexiconEntry]] = defaultdict(list)
        for e in self.entries.values():
            grouped[e.word].append(e)
        self.by_word = {}
        self.pos_of = {}
        for w, es in grouped.items():
            self.by_word[w] = LexiconEntry(
                w, "*",
                sum(e.pos_score for e in es) / len(es),
                sum(e.neg_score for e in es) / len(es),
            )
            self.pos_of[w] = frozenset(e.pos for e in es)

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self, word: str, pos: str) -> LexiconEntry | None:
        hit = self.entries.get((word, pos))
        return hit if hit is not None else self.by_word.get(word)

    def has(self, word: str, pos: str) -> bool:
        return (word, pos) in self.entries


def parse_lexicon(stream: TextIO | Iterable[str]) -> PolarityLexicon:
    """Read SentiWordNet 3.0 TSV and merge senses per (word, POS) with 1/rank weights."""
    acc: dict[tuple[str, str], list[float]] = defaultdict(lambda: [0.0, 0.0, 0.0])
    for line_no, raw in enumerate(stream, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 6:
            raise LexiconParseError(line_no, f"expected 6 tab-separated columns, got {len(cols)}")
        pos, _sid, ps, ns, terms, _gloss = cols
        pos = pos.strip().lower()
        if pos == "s":
            pos = "a"
        if pos not in POS_TAGS:
            raise LexiconParseError(line_no, f"unknown POS {pos!r}")
        try:
            p, n = float(ps), float(ns)
        except ValueError:
            raise LexiconParseError(line_no, f"non-numeric score in {ps!r}/{ns!r}") from None
        for term in terms.split():
            word, sep, rank = term.rpartition("#")
            if not sep or not word:
                raise LexiconParseError(line_no, f"malformed synset term {term!r}")
            try:
                weight = 1.0 / int(rank)
            except (ValueError, ZeroDivisionError):
                raise LexiconParseError(line_no, f"bad sense rank in {term!r}") from None
            slot = acc[(word.lower(), pos)]
            slot[0] += weight * p
            slot[1] += weight * n
            slot[2] += weight
    entries = {}
    for (w, pos), (sp, sn, sw) in acc.items():
        entries[(w, pos)] = LexiconEntry(w, pos, sp / sw, sn / sw)
    return PolarityLexicon(entries)


def load_lexicon(path) -> PolarityLexicon:
    with open(path, encoding="utf-8") as fh:
        return parse_lexicon(fh)


def lexicon_from_text(text: str) -> PolarityLexicon:
    return parse_lexicon(io.StringIO(text))


STOPLIST = frozenset("""
a an the this that these those some any each every either neither no all both
i me my mine myself we us our ours ourselves you your yours yourself yourselves
he him his himself she her hers herself it its itself they them their theirs
themselves what which who whom whose where when why how
and or but nor so yet if then else than because although though while whereas
of in on at by for with about against between into through during before after
above below to from up down out off over under again further once
is am are was were be been being have has had having do does did doing
will would shall should can could may might must
not only very too just also there here
""".split())

_SUFFIX_ADJ = ("ous", "ful", "ive", "able", "al")


def _verb_stems(word: str, suffix: str) -> list[str]:
    base = word[: -len(suffix)]
    stems = [base, base + "e"]
    if len(base) >= 2 and base[-1] == base[-2]:
        stems.append(base[:-1])
    if suffix == "ed" and base.endswith("i"):
        stems.append(base[:-1] + "y")
    if suffix == "ed":
        stems.append(word[:-1])
    return stems


def tag_word(word: str, lexicon: PolarityLexicon) -> str:
    if word in STOPLIST:
        return OTHER
    if len(word) > 4 and word.endswith("ly"):
        return "r"
    for suffix in ("ing", "ed"):
        if word.endswith(suffix) and len(word) > len(suffix) + 2:
            if any(lexicon.has(s, "v") for s in _verb_stems(word, suffix)):
                return "v"
    if any(word.endswith(s) and len(word) > len(s) + 2 for s in _SUFFIX_ADJ):
        return "a"
    known = lexicon.pos_of.get(word)
    if known:
        if len(known) == 1:
            return next(iter(known))
        if "a" in known:
            return "a"
    return "n"


def pos_tag(tokens: Sequence[str], lexicon: PolarityLexicon) -> list[str]:
    return [tag_word(t, lexicon) for t in tokens]


@dataclass(frozen=True)
class PolarityWord:
    word: str
    sign: str
    score: float


def extract_polarity_words(tokens: Sequence[str], tags: Sequence[str], lexicon: PolarityLexicon,
                           tau: float = DEFAULT_TAU) -> list[PolarityWord]:
    if len(tokens) != len(tags):
        raise ValueError(f"{len(tokens)} tokens but {len(tags)} tags")
    if tau < 0:
        raise ValueError("tau must be non-negative")
    seen: set[str] = set()
    out: list[PolarityWord] = []
    for tok, tag in zip(tokens, tags):
        if tok in seen or tag == OTHER:
            continue
        e = lexicon.lookup(tok, tag)
        if e is None or e.strength < tau:
            continue
        seen.add(tok)
        out.append(PolarityWord(tok, e.sign, e.strength))
    return out


def polarity_words_for(tokens: Sequence[str], lexicon: PolarityLexicon, tau: float = DEFAULT_TAU) -> list[PolarityWord]:
    return extract_polarity_words(tokens, pos_tag(tokens, lexicon), lexicon, tau)


@dataclass(frozen=True)
class PolarityStats:
    n_utterances: int
    mean_words: float
    coverage: float


def polarity_stats(corpus: Sequence[Sequence[str]], lexicon: PolarityLexicon,
                   tau: float = DEFAULT_TAU) -> PolarityStats:
    if not corpus:
        return PolarityStats(0, 0.0, 0.0)
    counts = [len(polarity_words_for(toks, lexicon, tau)) for toks in corpus]
    return PolarityStats(len(counts), sum(counts) / len(counts), sum(c > 0 for c in counts) / len(counts))


def polarity_jsonl_record(uid: str, words: Sequence[PolarityWord]) -> str:
    return json.dumps({
        "id": uid,
        "polarity_words": [{"word": w.word, "sign": w.sign, "score": w.score} for w in words],
    }, ensure_ascii=False)


def read_polarity_jsonl(lines: Iterable[str]) -> Mapping[str, list[PolarityWord]]:
    out = {}
    for line in lines:
        if not line.strip():
            continue
        rec = json.loads(line)
        out[rec["id"]] = [PolarityWord(w["word"], w["sign"], float(w["score"])) for w in rec["polarity_words"]]
    return out
