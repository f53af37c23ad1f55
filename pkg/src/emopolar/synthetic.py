"""Generated corpora and a small SentiWordNet-format lexicon for desk-scale checks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .data import EMOTIONS, DatasetManifest, Utterance
from .lexicon import PolarityLexicon, lexicon_from_text

CUES = {
    "anger": "furious",
    "love": "adore",
    "fear": "terrified",
    "joy": "delighted",
    "sadness": "miserable",
    "surprise": "astonished",
}

FILLER = """
build test merge branch commit issue patch release config server client module
function method class variable compile deploy docker kernel cache thread queue
socket request response header token parser script library package version update
change review comment file folder path log trace stack debug error warning output
input value field table query index schema migration feature option default
""".split()

# Emotion-neutral words that carry lexicon polarity, used to blur the signal.
DISTRACTORS = """
fine okay sure really quite maybe usual simple strange odd certain plain
""".split()

# (pos, positive, negative) per lemma; cue words score well above the default tau.
_LEXICON_ROWS = [
    ("a", "furious", 0.0, 0.75), ("v", "adore", 0.875, 0.0), ("a", "terrified", 0.0, 0.625),
    ("a", "delighted", 0.75, 0.0), ("a", "miserable", 0.0, 0.875), ("a", "astonished", 0.375, 0.125),
    ("a", "nice", 0.875, 0.0), ("a", "good", 0.625, 0.0), ("a", "bad", 0.0, 0.625),
    ("n", "surprise", 0.25, 0.125), ("v", "surprise", 0.125, 0.0), ("v", "hate", 0.0, 0.75),
    ("a", "fine", 0.375, 0.0), ("a", "okay", 0.25, 0.0), ("a", "strange", 0.0, 0.25),
    ("a", "odd", 0.0, 0.375), ("a", "simple", 0.125, 0.0), ("a", "certain", 0.125, 0.0),
    ("n", "error", 0.0, 0.375), ("n", "warning", 0.0, 0.125), ("n", "build", 0.0, 0.0),
    ("a", "plain", 0.0, 0.0),
]


def fixture_lexicon_text() -> str:
    lines = ["# synthetic fixture in SentiWordNet 3.0 layout"]
    for k, (pos, word, p, n) in enumerate(_LEXICON_ROWS):
        lines.append(f"{pos}\t{k:08d}\t{p}\t{n}\t{word}#1\tsynthetic gloss for {word}")
    return "\n".join(lines) + "\n"


def fixture_lexicon() -> PolarityLexicon:
    return lexicon_from_text(fixture_lexicon_text())


@dataclass(frozen=True)
class CorpusSpec:
    n: int = 600
    neutral_frac: float = 0.2
    multi_frac: float = 0.1
    min_filler: int = 4
    max_filler: int = 10
    distractors: int = 0
    cue_keep: float = 1.0


SEPARABLE = CorpusSpec()
DILUTED = CorpusSpec(n=400, min_filler=10, max_filler=18, distractors=4, cue_keep=0.85)


def _labels(rng: np.random.Generator, spec: CorpusSpec) -> tuple[bool, ...]:
    if rng.random() < spec.neutral_frac:
        return (False,) * len(EMOTIONS)
    k = 2 if rng.random() < spec.multi_frac else 1
    chosen = set(rng.choice(len(EMOTIONS), size=k, replace=False).tolist())
    return tuple(j in chosen for j in range(len(EMOTIONS)))


def generate_corpus(spec: CorpusSpec = SEPARABLE, seed: int = 0, prefix: str = "s") -> list[Utterance]:
    """Each labelled utterance contains its emotions' cue words among random filler.

    With ``cue_keep < 1`` a positive utterance occasionally loses its cue, and
    ``distractors`` lexicon-bearing but label-free words are sprinkled in.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    out = []
    for i in range(spec.n):
        labels = _labels(rng, spec)
        words = list(rng.choice(FILLER, size=int(rng.integers(spec.min_filler, spec.max_filler + 1))))
        if spec.distractors:
            words += list(rng.choice(DISTRACTORS, size=spec.distractors))
        for e, on in zip(EMOTIONS, labels):
            if on and rng.random() < spec.cue_keep:
                words.append(CUES[e])
        rng.shuffle(words)
        out.append(Utterance(f"{prefix}{i:05d}", " ".join(words), labels))
    return out


def separable_corpus(seed: int = 0) -> list[Utterance]:
    return generate_corpus(SEPARABLE, seed)


def diluted_corpus(seed: int = 0) -> list[Utterance]:
    return generate_corpus(DILUTED, seed, prefix="d")


def manifest_standin(manifest: DatasetManifest, seed: int = 0) -> list[Utterance]:
    """Random texts whose label totals match ``manifest`` exactly."""
    rng = np.random.Generator(np.random.PCG64(seed))
    n = manifest.expected_total
    flags = np.zeros((n, len(EMOTIONS)), dtype=bool)
    for j, e in enumerate(EMOTIONS):
        flags[rng.choice(n, size=manifest.counts.get(e, 0), replace=False), j] = True
    return [
        Utterance(f"{manifest.name}-{i:05d}", " ".join(rng.choice(FILLER, size=6)),
                  tuple(bool(x) for x in flags[i]))
        for i in range(n)
    ]


def perturbed(data: list[Utterance], index: int, emotion: str) -> list[Utterance]:
    """Flip one label, which shifts exactly one manifest count by one."""
    j = EMOTIONS.index(emotion)
    u = data[index]
    labels = list(u.labels)
    labels[j] = not labels[j]
    return data[:index] + [Utterance(u.id, u.text, tuple(labels))] + data[index + 1:]


def cue_map() -> Mapping[str, str]:
    return dict(CUES)
