"""Per-emotion and pooled F1, reference-table deltas and unanimous-error analysis."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Mapping, Sequence

import numpy as np

from .data import EMOTIONS

COLUMNS = EMOTIONS + ("micro", "macro")
CATEGORIES = ("General Error", "Implicit Sentiment Polarity", "Figurative Language", "Pragmatics", "Politeness")
DISCLAIMER = "desk-scale model vs. published full-scale result; not a reproduction claim"


class ReferenceKeyError(KeyError):
    pass


class InputError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def f1(counts: ConfusionCounts) -> tuple[float, float, float]:
    """Precision, recall, F1 with 0/0 taken as 0."""
    p = _ratio(counts.tp, counts.tp + counts.fp)
    r = _ratio(counts.tp, counts.tp + counts.fn)
    return p, r, _ratio(2 * p * r, p + r)


def confusion(gold, pred) -> list[ConfusionCounts]:
    """Per-emotion counts from ``[n, 6]`` boolean matrices."""
    g = np.asarray(gold, dtype=bool)
    p = np.asarray(pred, dtype=bool)
    if g.shape != p.shape:
        raise InputError(f"gold shape {g.shape} != prediction shape {p.shape}")
    if g.ndim == 1:
        g, p = g[:, None], p[:, None]
    return [ConfusionCounts(int((g[:, j] & p[:, j]).sum()), int((~g[:, j] & p[:, j]).sum()),
                            int((g[:, j] & ~p[:, j]).sum()), int((~g[:, j] & ~p[:, j]).sum()))
            for j in range(g.shape[1])]


def micro_macro(counts: Sequence[ConfusionCounts]) -> tuple[float, float]:
    pooled = ConfusionCounts()
    for c in counts:
        pooled = pooled + c
    return f1(pooled)[2], float(np.mean([f1(c)[2] for c in counts])) if counts else 0.0


@dataclass
class EvalReport:
    precision: dict[str, float]
    recall: dict[str, float]
    f1: dict[str, float]
    micro: float
    macro: float
    counts: dict[str, ConfusionCounts]
    metadata: dict = field(default_factory=dict)

    def score(self, column: str) -> float:
        if column == "micro":
            return self.micro
        if column == "macro":
            return self.macro
        return self.f1[column]

    def row(self) -> list[float]:
        return [self.score(c) for c in COLUMNS]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["counts"] = {k: asdict(v) for k, v in self.counts.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping) -> "EvalReport":
        return cls(dict(d["precision"]), dict(d["recall"]), dict(d["f1"]), float(d["micro"]), float(d["macro"]),
                   {k: ConfusionCounts(**v) for k, v in d["counts"].items()}, dict(d.get("metadata", {})))

    @classmethod
    def load(cls, path) -> "EvalReport":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_table(self, label: str | None = None) -> str:
        label = label or self.metadata.get("label") or self.metadata.get("mode", "model")
        return format_table([(label, self.row())])


def evaluate(gold, pred, metadata: dict | None = None) -> EvalReport:
    counts = confusion(gold, pred)
    prf = [f1(c) for c in counts]
    micro, macro = micro_macro(counts)
    return EvalReport(
        {e: v[0] for e, v in zip(EMOTIONS, prf)},
        {e: v[1] for e, v in zip(EMOTIONS, prf)},
        {e: v[2] for e, v in zip(EMOTIONS, prf)},
        micro, macro, dict(zip(EMOTIONS, counts)), dict(metadata or {}),
    )


_HEAD = ("Model", "Anger", "Love", "Fear", "Joy", "Sadness", "Surprise", "Micro Avg.", "Macro Avg.")


def _cell(v) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, str):
        return v
    return f"{v:.3f}"


def format_table(rows: Sequence[tuple[str, Sequence]]) -> str:
    """Aligned text table, one column per emotion plus micro/macro."""
    body = [list(_HEAD)] + [[name] + [_cell(v) for v in vals] for name, vals in rows]
    widths = [max(len(r[i]) for r in body) for i in range(len(_HEAD))]
    lines = []
    for k, r in enumerate(body):
        lines.append(" | ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))))
        if k == 0:
            lines.append("-+-".join("-" * w for w in widths))
    return "\n".join(lines)


# --- reference tables --------------------------------------------------------

@dataclass(frozen=True)
class ReferenceTable:
    models: Mapping[str, Mapping]
    source: str = ""
    version: int = 1

    def keys(self) -> list[str]:
        return sorted(self.models)

    def scores(self, key: str) -> dict[str, float]:
        try:
            return dict(self.models[key]["scores"])
        except KeyError:
            raise ReferenceKeyError(f"unknown reference model {key!r}; available: {', '.join(self.keys())}") from None

    def citation(self, key: str) -> str:
        m = self.models[key]
        return f"{m['table']}, {m['dataset']}: {self.source}"

    @classmethod
    def from_file(cls, path) -> "ReferenceTable":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls(raw["models"], raw.get("source", ""), raw.get("version", 1))

    @classmethod
    def bundled(cls) -> "ReferenceTable":
        raw = json.loads(resources.files("emopolar.resources").joinpath("reference_f1.json").read_text("utf-8"))
        return cls(raw["models"], raw.get("source", ""), raw.get("version", 1))


@dataclass
class DeltaTable:
    label: str
    reference_key: str
    ours: list[float]
    reference: list[float]
    delta_pct: list[float | None]
    note: str = DISCLAIMER

    def delta_cells(self) -> list[str]:
        return ["n/a" if d is None else f"{d:+.2f}%" for d in self.delta_pct]

    def to_text(self) -> str:
        table = format_table([
            (self.reference_key, self.reference),
            (self.label, self.ours),
            ("(+/-)", self.delta_cells()),
        ])
        return f"{table}\n[{self.note}]"

    def to_dict(self) -> dict:
        return {"label": self.label, "reference_key": self.reference_key, "note": self.note,
                "ours": dict(zip(COLUMNS, self.ours)), "reference": dict(zip(COLUMNS, self.reference)),
                "delta_pct": dict(zip(COLUMNS, self.delta_pct))}


def compare_to_reference(report: EvalReport, reference: ReferenceTable, key: str,
                         label: str | None = None) -> DeltaTable:
    ref = reference.scores(key)
    ours = report.row()
    refs = [float(ref[c]) for c in COLUMNS]
    deltas = [None if r == 0 else (o - r) / r * 100.0 for o, r in zip(ours, refs)]
    return DeltaTable(label or report.metadata.get("label", "ours"), key, ours, refs, deltas)


# --- error analysis ------------------------------------------------------------

@dataclass(frozen=True)
class ErrorCase:
    utterance_id: str
    emotion: str
    gold: bool
    predictions: Mapping[str, bool]
    direction: str
    category: str | None = None

    @property
    def case_id(self) -> str:
        return f"{self.utterance_id}:{self.emotion}"

    def to_json(self) -> str:
        return json.dumps({"case_id": self.case_id, "id": self.utterance_id, "emotion": self.emotion,
                           "gold": self.gold, "predictions": dict(self.predictions),
                           "direction": self.direction, "category": self.category})


Predictions = Mapping[str, Sequence[bool]]


def _check_coverage(gold: Predictions, models: Mapping[str, Predictions]) -> None:
    ids = set(gold)
    for name, preds in models.items():
        if set(preds) != ids:
            missing = sorted(ids - set(preds))[:5]
            extra = sorted(set(preds) - ids)[:5]
            raise InputError(f"model {name!r} covers different ids (missing {missing}, extra {extra})")


def unanimous_errors(gold: Predictions, models: Mapping[str, Predictions]) -> list[ErrorCase]:
    """One case per (utterance, emotion) where every model agrees and all are wrong."""
    if not models:
        raise InputError("need at least one prediction set")
    _check_coverage(gold, models)
    cases = []
    for uid in sorted(gold):
        g = gold[uid]
        for j, e in enumerate(EMOTIONS):
            votes = {m: bool(p[uid][j]) for m, p in models.items()}
            vals = set(votes.values())
            if len(vals) == 1 and vals.pop() != bool(g[j]):
                cases.append(ErrorCase(uid, e, bool(g[j]), votes,
                                       "false-negative" if g[j] else "false-positive"))
    return cases


def group_by_utterance(cases: Sequence[ErrorCase]) -> dict[str, list[ErrorCase]]:
    out: dict[str, list[ErrorCase]] = {}
    for c in cases:
        out.setdefault(c.utterance_id, []).append(c)
    return out


def load_annotations(path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["case_id"].strip()] = row["category"].strip()
    validate_annotations(out)
    return out


def validate_annotations(annotations: Mapping[str, str]) -> None:
    bad = sorted({c for c in annotations.values() if c not in CATEGORIES})
    if bad:
        raise InputError(f"unknown error categories {bad}; allowed: {', '.join(CATEGORIES)}")


@dataclass
class CategoryReport:
    total: int
    counts: dict[str, int]
    percent: dict[str, float]
    per_emotion: dict[str, dict[str, int]]
    unannotated: list[str]

    def to_text(self) -> str:
        lines = [f"{'category':<28} {'count':>5} {'share':>7}"]
        for c in CATEGORIES:
            lines.append(f"{c:<28} {self.counts[c]:>5} {self.percent[c]:>6.1f}%")
        lines.append(f"{'unannotated':<28} {len(self.unannotated):>5}")
        lines.append(f"{'total':<28} {self.total:>5}")
        return "\n".join(lines)


def category_report(cases: Sequence[ErrorCase], annotations: Mapping[str, str] | None = None) -> CategoryReport:
    """Tally human-assigned categories; cases are never auto-categorized."""
    annotations = annotations or {}
    validate_annotations(annotations)
    counts = dict.fromkeys(CATEGORIES, 0)
    per_emotion = {e: dict.fromkeys(CATEGORIES, 0) for e in EMOTIONS}
    unannotated = []
    for c in cases:
        cat = annotations.get(c.case_id)
        if cat is None:
            unannotated.append(c.case_id)
            continue
        counts[cat] += 1
        per_emotion[c.emotion][cat] += 1
    annotated = sum(counts.values())
    percent = {k: (100.0 * v / annotated if annotated else 0.0) for k, v in counts.items()}
    return CategoryReport(len(cases), counts, percent, per_emotion, unannotated)


@dataclass
class ResolutionReport:
    resolved: list[ErrorCase]
    persistent: list[ErrorCase]
    by_category: dict[str, tuple[int, int]]

    @property
    def total(self) -> int:
        return len(self.resolved) + len(self.persistent)

    def to_text(self) -> str:
        lines = [f"resolved {len(self.resolved)}/{self.total}, persistent {len(self.persistent)}"]
        for c, (r, n) in self.by_category.items():
            if n:
                lines.append(f"  {c}: {r}/{n} ({100.0 * r / n:.2f}%)")
        return "\n".join(lines)


def resolved_errors(before: Sequence[ErrorCase], after: Mapping[str, Predictions],
                    annotations: Mapping[str, str] | None = None) -> ResolutionReport:
    """Split earlier unanimous errors by whether any new model now gets them right."""
    if not after:
        raise InputError("need at least one prediction set")
    annotations = annotations or {}
    resolved, persistent = [], []
    for c in before:
        j = EMOTIONS.index(c.emotion)
        for name, preds in after.items():
            if c.utterance_id not in preds:
                raise InputError(f"model {name!r} has no prediction for {c.utterance_id!r}")
        ok = any(bool(p[c.utterance_id][j]) == c.gold for p in after.values())
        (resolved if ok else persistent).append(c)
    by_cat = {}
    for cat in CATEGORIES:
        n = sum(annotations.get(c.case_id) == cat for c in before)
        r = sum(annotations.get(c.case_id) == cat for c in resolved)
        by_cat[cat] = (r, n)
    return ResolutionReport(resolved, persistent, by_cat)
