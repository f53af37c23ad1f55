"""Command-line entry point: ``emopolar <subcommand> [flags]``.

Settings resolve in this order, later winning: built-in defaults, a JSON file
given with ``--config``, ``EMOPOL_*`` environment variables, command-line flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

from . import data as D
from . import lexicon as L
from . import metrics as M
from . import model as Mo
from . import tensor as T
from . import text as Tx
from . import train as Tr

ENV_PREFIX = "EMOPOL_"
EXIT_OK, EXIT_VALIDATION, EXIT_TRAINING, EXIT_COMPAT = 0, 2, 3, 4

log = logging.getLogger("emopolar")


@dataclass
class RunConfig:
    dataset: str | None = None
    format: str | None = None
    manifest: str | None = None
    lexicon: str | None = None
    tau: float = L.DEFAULT_TAU
    mode: str = "baseline"
    blend: str = "pooled-concat"
    w_primary: float = 0.75
    w_polarity: float = 0.25
    seeds: list[int] = field(default_factory=lambda: [0])
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 3e-4
    patience: int = 5
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    max_len: int = 64
    dropout: float = 0.1
    min_freq: int = 2
    out: str = "runs"
    run_id: str | None = None
    jobs: int = 1

    def blend_config(self) -> Mo.BlendConfig:
        if self.mode == "baseline":
            return Mo.BASELINE
        if self.mode != "polarity":
            raise Mo.ConfigError(f"unknown mode {self.mode!r}")
        return Mo.BlendConfig(self.blend, self.w_primary, self.w_polarity)

    def encoder_config(self, vocab_size: int) -> Mo.EncoderConfig:
        return Mo.EncoderConfig(vocab_size, self.d_model, self.n_layers, self.n_heads, self.d_ff,
                                self.max_len, self.dropout)

    def train_config(self, seed: int) -> Tr.TrainConfig:
        return Tr.TrainConfig(epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.learning_rate,
                              patience=min(self.patience, self.epochs), seed=seed)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, value):
    kind = _FIELD_TYPES[name]
    if value is None:
        return None
    if kind == "list[int]":
        if isinstance(value, str):
            return [int(v) for v in value.replace(",", " ").split()]
        return [int(v) for v in value]
    if kind == "int":
        return int(value)
    if kind == "float":
        return float(value)
    return str(value)


def resolve_config(args: argparse.Namespace, environ=os.environ) -> RunConfig:
    values: dict = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            raw = json.load(fh)
        unknown = set(raw) - set(_FIELD_TYPES)
        if unknown:
            raise Mo.ConfigError(f"unknown config keys {sorted(unknown)}")
        values.update({k: _coerce(k, v) for k, v in raw.items()})
    for name in _FIELD_TYPES:
        env = environ.get(ENV_PREFIX + name.upper())
        if env is not None:
            values[name] = _coerce(name, env)
    for name in _FIELD_TYPES:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = _coerce(name, flag)
    cfg = RunConfig(**values)
    if cfg.jobs < 1:
        raise Mo.ConfigError("--jobs must be at least 1")
    return cfg


def _manifest(ref: str | None) -> D.DatasetManifest | None:
    if ref is None:
        return None
    if ref.lower() in D.MANIFESTS:
        return D.MANIFESTS[ref.lower()]
    return D.DatasetManifest.load(ref)


def _load(cfg: RunConfig) -> list[D.Utterance]:
    if not cfg.dataset:
        raise Mo.ConfigError("--dataset is required")
    return D.load_dataset(cfg.dataset, _manifest(cfg.manifest), cfg.format)


def _lexicon(cfg: RunConfig, required: bool) -> L.PolarityLexicon | None:
    if not cfg.lexicon:
        if required:
            raise Mo.ConfigError("--lexicon is required for this mode")
        return None
    return L.load_lexicon(cfg.lexicon)


def run_dir(cfg: RunConfig, command: str) -> Path:
    name = cfg.run_id or f"{command}-{time.strftime('%Y%m%d-%H%M%S')}"
    d = Path(cfg.out) / name
    d.mkdir(parents=True, exist_ok=True)
    (d / "run_config.json").write_text(json.dumps({"command": command, **asdict(cfg)}, indent=2) + "\n")
    return d


def _emit(obj) -> None:
    print(obj if isinstance(obj, str) else json.dumps(obj, indent=2))


# --- subcommands ---------------------------------------------------------------

def cmd_prepare(cfg: RunConfig, args) -> int:
    data = _load(cfg)
    counts = D.label_counts(data)
    n = len(data)
    lines = [f"{'emotion':<10} {'count':>6} {'share':>7}"]
    for e in D.EMOTIONS:
        lines.append(f"{e:<10} {counts[e]:>6} {100.0 * counts[e] / n if n else 0.0:>6.1f}%")
    neutral = sum(u.neutral for u in data)
    lines.append(f"{'neutral':<10} {neutral:>6} {100.0 * neutral / n if n else 0.0:>6.1f}%")
    _emit("\n".join(lines))
    _emit(f"{n} rows, OK")
    return EXIT_OK


def cmd_extract_polarity(cfg: RunConfig, args) -> int:
    data = _load(cfg)
    lex = _lexicon(cfg, required=True)
    d = run_dir(cfg, "extract-polarity")
    corpus = [Tx.tokenize(Tx.preprocess(u.text)) for u in data]
    with open(d / "polarity.jsonl", "w", encoding="utf-8") as fh:
        for u, toks in zip(data, corpus):
            fh.write(L.polarity_jsonl_record(u.id, L.polarity_words_for(toks, lex, cfg.tau)) + "\n")
    stats = L.polarity_stats(corpus, lex, cfg.tau)
    (d / "polarity_stats.json").write_text(json.dumps(asdict(stats), indent=2) + "\n")
    _emit(f"utterances {stats.n_utterances}  mean polarity words {stats.mean_words:.3f}  "
          f"coverage {stats.coverage:.4f}")
    _emit(f"wrote {d / 'polarity.jsonl'}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    data = _load(cfg)
    blend = cfg.blend_config()
    lex = _lexicon(cfg, required=blend.uses_polarity)
    d = run_dir(cfg, "train")
    for seed in cfg.seeds:
        split = D.stratified_split(data, 0.8, seed)
        train, _ = split.apply(sorted(data, key=lambda u: u.id))
        vocab = Tr.vocab_for(train, min_freq=cfg.min_freq)
        model = Tr.train_one_vs_all(train, vocab, lex, cfg.encoder_config(len(vocab)), blend,
                                    cfg.train_config(seed), cfg.tau, cfg.jobs)
        sd = d / f"seed-{seed}"
        sd.mkdir(exist_ok=True)
        (sd / "split.json").write_text(split.to_json() + "\n")
        Tr.save_model(model, sd, {"run_seed": seed, "mode": cfg.mode})
        _emit(f"seed {seed}: best epochs {model.best_epochs} -> {sd}")
    return EXIT_OK


def _seed_dirs(run: Path) -> list[Path]:
    dirs = sorted(p for p in run.glob("seed-*") if p.is_dir())
    if not dirs:
        raise FileNotFoundError(f"no seed-* directories under {run}")
    return dirs


def cmd_evaluate(cfg: RunConfig, args) -> int:
    run = Path(args.run)
    saved = json.loads((run / "run_config.json").read_text())
    trained = RunConfig(**{k: v for k, v in saved.items() if k in _FIELD_TYPES})
    cfg = replace(cfg, dataset=cfg.dataset or trained.dataset, format=cfg.format or trained.format,
                  lexicon=cfg.lexicon or trained.lexicon)
    data = _load(cfg)
    by_id = {u.id: u for u in data}
    lex = _lexicon(cfg, required=False)
    reports = []
    for sd in _seed_dirs(run):
        split = D.SplitAssignment.from_json((sd / "split.json").read_text())
        if set(split.tags) != set(by_id):
            raise M.InputError(f"{sd / 'split.json'} does not cover the dataset ids")
        test = [by_id[i] for i in split.ids("test")]
        model = Tr.load_model(sd, lex)
        preds = Tr.predict(model, test, model.featurizer.vocab.digest())
        (sd / "predictions.csv").write_text(preds.to_csv())
        report = M.evaluate(Tr.gold_matrix(test), preds.labels, {
            "mode": trained.mode, "blend": model.blend.mode, "seed": split.seed,
            "label": f"{trained.mode}/seed-{split.seed}", "vocab_hash": model.featurizer.vocab.digest(),
            "n_test": len(test)})
        (sd / "report.json").write_text(report.to_json() + "\n")
        reports.append(report)
    _emit(M.format_table([(r.metadata["label"], r.row()) for r in reports]))
    return EXIT_OK


def _label(report: M.EvalReport, path: str) -> str:
    return report.metadata.get("label") or Path(path).parent.name or path


def paired_deltas(reports: Sequence[M.EvalReport]) -> list[tuple[int, float, float, float]]:
    """(seed, baseline macro, polarity macro, delta) for seeds present in both modes."""
    by = {}
    for r in reports:
        by.setdefault(r.metadata.get("mode"), {})[r.metadata.get("seed")] = r.macro
    base, pol = by.get("baseline", {}), by.get("polarity", {})
    return [(s, base[s], pol[s], pol[s] - base[s]) for s in sorted(set(base) & set(pol))]


def cmd_compare(cfg: RunConfig, args) -> int:
    reports = [M.EvalReport.load(p) for p in args.reports]
    labels = [_label(r, p) for r, p in zip(reports, args.reports)]
    if args.reference:
        table = M.ReferenceTable.from_file(args.reference_file) if args.reference_file else M.ReferenceTable.bundled()
        out = [M.compare_to_reference(r, table, args.reference, lab).to_text() for r, lab in zip(reports, labels)]
        _emit("\n\n".join(out))
        _emit(f"reference: {table.citation(args.reference)}")
    else:
        rows = [(lab, r.row()) for r, lab in zip(reports, labels)]
        if len(reports) >= 2:
            base = reports[0]
            for r, lab in zip(reports[1:], labels[1:]):
                d = M.compare_to_reference(r, M.ReferenceTable({"_": {"scores": dict(zip(M.COLUMNS, base.row()))}}), "_")
                rows.append((f"(+/-) {lab}", d.delta_cells()))
        _emit(M.format_table(rows))
    pairs = paired_deltas(reports)
    if pairs:
        for s, b, p, dlt in pairs:
            _emit(f"seed {s}: baseline macro {b:.4f}  polarity macro {p:.4f}  delta {dlt:+.4f}")
        mean = sum(x[3] for x in pairs) / len(pairs)
        _emit(f"mean paired macro-F1 delta {mean:+.4f} over {len(pairs)} seeds")
    return EXIT_OK


def _gold_for(cfg: RunConfig, ids: set[str]) -> dict[str, tuple[bool, ...]]:
    data = _load(cfg)
    by_id = {u.id: u.labels for u in data}
    missing = sorted(ids - set(by_id))
    if missing:
        raise M.InputError(f"prediction ids not in the gold dataset: {missing[:5]}")
    return {i: by_id[i] for i in ids}


def _prediction_sets(paths: Sequence[str]) -> dict[str, dict[str, tuple[bool, ...]]]:
    out = {}
    for p in paths:
        name = Path(p).parent.name if Path(p).name == "predictions.csv" else Path(p).stem
        while name in out:
            name += "'"
        out[name] = Tr.read_predictions_csv(p).as_mapping()
    return out


def cmd_errors(cfg: RunConfig, args) -> int:
    models = _prediction_sets(args.predictions)
    ids = set(next(iter(models.values())))
    gold = _gold_for(cfg, ids)
    annotations = M.load_annotations(args.annotations) if args.annotations else None
    cases = M.unanimous_errors(gold, models)
    d = run_dir(cfg, "errors")
    with open(d / "error_cases.jsonl", "w", encoding="utf-8") as fh:
        for c in cases:
            fh.write(c.to_json() + "\n")
    report = M.category_report(cases, annotations)
    text = [f"unanimous errors: {len(cases)} cases over {len(M.group_by_utterance(cases))} utterances "
            f"({len(models)} model{'s' if len(models) != 1 else ''})", report.to_text()]
    if args.after:
        res = M.resolved_errors(cases, _prediction_sets(args.after), annotations)
        text.append(res.to_text())
    (d / "category_report.txt").write_text("\n".join(text) + "\n")
    _emit("\n".join(text))
    return EXIT_OK


def cmd_experiment(cfg: RunConfig, args) -> int:
    data = _load(cfg)
    blend = cfg.blend_config()
    lex = _lexicon(cfg, required=blend.uses_polarity)
    d = run_dir(cfg, "experiment")
    res = Tr.run_experiment(data, cfg.mode, cfg.seeds, lex, cfg.encoder_config(1), blend if blend.uses_polarity else None,
                            cfg.train_config(cfg.seeds[0]), cfg.tau, Path(cfg.dataset).stem, cfg.jobs, cfg.min_freq)
    for r, p in zip(res.reports, res.predictions):
        r.metadata["label"] = f"{cfg.mode}/seed-{r.metadata['seed']}"
        sd = d / f"seed-{r.metadata['seed']}"
        sd.mkdir(exist_ok=True)
        (sd / "report.json").write_text(r.to_json() + "\n")
        (sd / "predictions.csv").write_text(p.to_csv())
    (d / "aggregate.json").write_text(json.dumps(res.aggregate, indent=2) + "\n")
    _emit(M.format_table([(r.metadata["label"], r.row()) for r in res.reports]))
    a = res.aggregate
    _emit(f"micro {a['micro_mean']:.4f} ± {a['micro_std']:.4f}  macro {a['macro_mean']:.4f} ± {a['macro_std']:.4f}")
    return EXIT_OK


# --- parser ----------------------------------------------------------------------

def _data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset")
    p.add_argument("--format", choices=("csv", "jsonl"))
    p.add_argument("--manifest", help="github, stackoverflow, or a manifest JSON path")


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lexicon", help="SentiWordNet 3.0 TSV file")
    p.add_argument("--tau", type=float)
    p.add_argument("--mode", choices=("baseline", "polarity"))
    p.add_argument("--blend", choices=("pooled-concat", "attention-keys"))
    p.add_argument("--w-primary", dest="w_primary", type=float)
    p.add_argument("--w-polarity", dest="w_polarity", type=float)
    p.add_argument("--seed", "--seeds", dest="seeds", type=int, nargs="+")
    p.add_argument("--epochs", type=int)
    p.add_argument("--jobs", type=int)


def _out_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", help="parent directory for run directories")
    p.add_argument("--run-id", dest="run_id", help="fixed run directory name instead of a timestamp")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emopolar", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON file of RunConfig keys")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="validate a dataset and print its label distribution")
    _data_flags(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("extract-polarity", help="write per-utterance polarity words as JSONL")
    _data_flags(p)
    p.add_argument("--lexicon")
    p.add_argument("--tau", type=float)
    _out_flags(p)
    p.set_defaults(func=cmd_extract_polarity)

    p = sub.add_parser("train", help="train one-vs-all classifiers per seed")
    _data_flags(p)
    _model_flags(p)
    _out_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a training run on its held-out split")
    p.add_argument("--run", required=True, help="directory written by 'train'")
    _data_flags(p)
    p.add_argument("--lexicon")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="tabulate reports, optionally against a published reference row")
    p.add_argument("reports", nargs="+")
    p.add_argument("--reference", help="reference model key, e.g. sentimoji-github")
    p.add_argument("--reference-file", dest="reference_file")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("errors", help="list unanimous errors across prediction files")
    _data_flags(p)
    p.add_argument("--predictions", nargs="+", required=True)
    p.add_argument("--after", nargs="+", help="later prediction files for the resolution report")
    p.add_argument("--annotations", help="CSV with case_id,category")
    _out_flags(p)
    p.set_defaults(func=cmd_errors)

    p = sub.add_parser("experiment", help="split, train, predict and score in one go")
    _data_flags(p)
    _model_flags(p)
    _out_flags(p)
    p.set_defaults(func=cmd_experiment)
    return parser


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (Tr.CompatibilityError, T.CheckpointError, Mo.ContractError)):
        return EXIT_COMPAT
    if isinstance(exc, (Tr.TrainingError, T.NumericError)):
        return EXIT_TRAINING
    return EXIT_VALIDATION


def _error_json(exc: BaseException, code: int) -> str:
    rec = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("row", "line_no", "emotion", "epoch"):
        if hasattr(exc, attr):
            rec[attr] = getattr(exc, attr)
    return json.dumps(rec)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve_config(args)
        return args.func(cfg, args)
    except (ValueError, KeyError, OSError, RuntimeError, ArithmeticError) as exc:
        code = exit_code_for(exc)
        print(_error_json(exc, code), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
