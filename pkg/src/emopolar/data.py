"""Utterances, dataset manifests, file loading and multi-label stratified splitting."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

EMOTIONS = ("anger", "love", "fear", "joy", "sadness", "surprise")
CSV_HEADER = ("id", "text") + EMOTIONS


class DatasetError(ValueError):
    """Malformed input file; ``row`` is 1-based, counting the header as row 1."""

    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class Utterance:
    id: str
    text: str
    labels: tuple[bool, ...]

    def __post_init__(self):
        if len(self.labels) != len(EMOTIONS):
            raise ValueError(f"expected {len(EMOTIONS)} labels, got {len(self.labels)}")

    @property
    def neutral(self) -> bool:
        return not any(self.labels)


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    expected_total: int
    counts: Mapping[str, int]

    def __post_init__(self):
        bad = [e for e, c in self.counts.items() if c > self.expected_total]
        if bad:
            raise ValueError(f"{self.name}: counts exceed total for {bad}")

    def check(self, data: Sequence[Utterance]) -> None:
        found = label_counts(data)
        problems = []
        if len(data) != self.expected_total:
            problems.append(f"total: expected {self.expected_total}, found {len(data)}")
        for e in EMOTIONS:
            if e in self.counts and found[e] != self.counts[e]:
                problems.append(f"{e}: expected {self.counts[e]}, found {found[e]}")
        if problems:
            raise ValidationError(f"{self.name} manifest mismatch: " + "; ".join(problems))

    def to_json(self) -> str:
        return json.dumps({"name": self.name, "expected_total": self.expected_total,
                           "counts": dict(self.counts)}, indent=2)

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls(raw["name"], int(raw["expected_total"]), {k.lower(): int(v) for k, v in raw["counts"].items()})


GITHUB = DatasetManifest("github", 2000, dict(zip(EMOTIONS, (340, 220, 198, 422, 274, 328))))
STACKOVERFLOW = DatasetManifest("stackoverflow", 4800, dict(zip(EMOTIONS, (882, 1220, 106, 491, 230, 45))))
MANIFESTS = {m.name: m for m in (GITHUB, STACKOVERFLOW)}


def label_counts(data: Iterable[Utterance]) -> dict[str, int]:
    counts = dict.fromkeys(EMOTIONS, 0)
    for u in data:
        for e, flag in zip(EMOTIONS, u.labels):
            counts[e] += flag
    return counts


def _flag(value, row: int, column: str) -> bool:
    if isinstance(value, bool):
        return value
    s = str(value).strip()
    if s in ("0", "1"):
        return s == "1"
    raise DatasetError(row, f"column {column!r} must be 0 or 1, got {value!r}")


def _read_csv(path: Path) -> list[Utterance]:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DatasetError(1, "missing header")
        if tuple(h.strip().lower() for h in header) != CSV_HEADER:
            raise DatasetError(1, f"header must be {','.join(CSV_HEADER)}")
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(CSV_HEADER):
                raise DatasetError(row_no, f"expected {len(CSV_HEADER)} fields, got {len(row)}")
            labels = tuple(_flag(v, row_no, e) for v, e in zip(row[2:], EMOTIONS))
            out.append(Utterance(row[0], row[1], labels))
    return out


def _read_jsonl(path: Path) -> list[Utterance]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for row_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                labels = tuple(_flag(rec[e], row_no, e) for e in EMOTIONS)
                out.append(Utterance(str(rec["id"]), rec["text"], labels))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DatasetError(row_no, f"bad record: {exc}") from None
    return out


def load_dataset(path, manifest: DatasetManifest | None = None, fmt: str | None = None) -> list[Utterance]:
    path = Path(path)
    fmt = fmt or ("jsonl" if path.suffix.lower() in (".jsonl", ".json") else "csv")
    if fmt == "csv":
        data = _read_csv(path)
    elif fmt == "jsonl":
        data = _read_jsonl(path)
    else:
        raise ValueError(f"unknown dataset format {fmt!r}")
    ids = [u.id for u in data]
    if len(set(ids)) != len(ids):
        dup = next(i for i in ids if ids.count(i) > 1)
        raise ValidationError(f"duplicate utterance id {dup!r}")
    if manifest is not None:
        manifest.check(data)
    return data


def write_dataset(data: Sequence[Utterance], path, fmt: str = "csv") -> None:
    if fmt == "csv":
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            for u in data:
                w.writerow([u.id, u.text, *(int(x) for x in u.labels)])
    else:
        with open(path, "w", encoding="utf-8") as fh:
            for u in data:
                rec = {"id": u.id, "text": u.text, **{e: int(x) for e, x in zip(EMOTIONS, u.labels)}}
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


# --- splitting ---------------------------------------------------------------

@dataclass(frozen=True)
class SplitAssignment:
    tags: Mapping[str, str]
    seed: int
    train_frac: float = 0.8

    def ids(self, tag: str) -> list[str]:
        return sorted(k for k, v in self.tags.items() if v == tag)

    def apply(self, data: Sequence[Utterance]) -> tuple[list[Utterance], list[Utterance]]:
        train = [u for u in data if self.tags[u.id] == "train"]
        test = [u for u in data if self.tags[u.id] == "test"]
        return train, test

    def to_json(self) -> str:
        return json.dumps({"seed": self.seed, "train_frac": self.train_frac,
                           "tags": dict(sorted(self.tags.items()))}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "SplitAssignment":
        raw = json.loads(text)
        return cls(raw["tags"], raw["seed"], raw.get("train_frac", 0.8))


def n_train_for(n: int, train_frac: float) -> int:
    # round half up, so a single utterance lands in train
    return min(n, int(math.floor(n * train_frac + 0.5)))


def stratified_split(data: Sequence[Utterance], train_frac: float = 0.8, seed: int = 0) -> SplitAssignment:
    """Iterative multi-label stratification, rarest label first, neutrals last.

    Each label's still-unassigned carriers are shuffled and the first ``k`` go
    to test, where ``k`` tops that label's test count up to its proportional
    share, clamped so the global split sizes come out exact.
    """
    if not data:
        raise ValueError("cannot split an empty dataset")
    items = sorted(data, key=lambda u: u.id)
    n = len(items)
    n_test = n - n_train_for(n, train_frac)
    test_frac = 1.0 - train_frac
    rng = np.random.Generator(np.random.PCG64(seed))
    totals = np.array([sum(u.labels[j] for u in items) for j in range(len(EMOTIONS))])
    tags: dict[str, str] = {}
    in_test = np.zeros(len(EMOTIONS), dtype=np.int64)
    test_left, train_left = n_test, n - n_test

    def assign(group: list[Utterance], k: int) -> None:
        nonlocal test_left, train_left
        order = rng.permutation(len(group))
        for rank, idx in enumerate(order):
            u = group[idx]
            tag = "test" if rank < k else "train"
            tags[u.id] = tag
            if tag == "test":
                in_test[:] += np.array(u.labels, dtype=np.int64)
                test_left -= 1
            else:
                train_left -= 1

    for j in sorted(range(len(EMOTIONS)), key=lambda j: (totals[j], j)):
        group = [u for u in items if u.labels[j] and u.id not in tags]
        if not group:
            continue
        want = int(math.floor(totals[j] * test_frac + 0.5)) - int(in_test[j])
        lo = max(0, len(group) - train_left)
        hi = min(len(group), test_left)
        assign(group, min(max(want, lo), hi))
    rest = [u for u in items if u.id not in tags]
    assign(rest, test_left)
    return SplitAssignment(tags, seed, train_frac)


def prevalence(data: Sequence[Utterance]) -> np.ndarray:
    if not data:
        return np.zeros(len(EMOTIONS))
    return np.array([[float(x) for x in u.labels] for u in data]).mean(axis=0)
