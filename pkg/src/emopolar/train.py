"""One-vs-all training, prediction and end-to-end experiment runs."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .data import EMOTIONS, SplitAssignment, Utterance, stratified_split
from .lexicon import DEFAULT_TAU, PolarityLexicon, PolarityWord, polarity_words_for
from .metrics import EvalReport, evaluate, f1, confusion
from .model import (BASELINE, BlendConfig, EncoderConfig, EncoderParams, collate,
                    forward_logits, init_params, predict_positive, probability)
from .text import TokenizedPair, Vocabulary, build_vocab, encode, preprocess, tokenize

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    def __init__(self, emotion: str, epoch: int, message: str = "loss is not finite"):
        super().__init__(f"{emotion}, epoch {epoch}: {message}")
        self.emotion = emotion
        self.epoch = epoch


class CompatibilityError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 5
    seed: int = 0
    val_frac: float = 0.1

    def __post_init__(self):
        for name in ("epochs", "batch_size", "patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.patience > self.epochs:
            raise ValueError("patience cannot exceed epochs")
        if not 0.0 <= self.val_frac < 1.0:
            raise ValueError("val_frac must be in [0, 1)")


class Adam:
    def __init__(self, params: Sequence[T.Tensor], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = np.zeros_like(p.data)


@dataclass
class Featurizer:
    """Turns raw utterances into :class:`TokenizedPair` for a fixed vocabulary."""

    vocab: Vocabulary
    lexicon: PolarityLexicon | None = None
    tau: float = DEFAULT_TAU
    max_len: int = 64

    def polarity(self, tokens: Sequence[str]) -> list[PolarityWord]:
        if self.lexicon is None:
            return []
        return polarity_words_for(tokens, self.lexicon, self.tau)

    def pair(self, text: str) -> TokenizedPair:
        tokens = tokenize(preprocess(text))
        words = [w.word for w in self.polarity(tokens)]
        return encode(tokens, self.vocab, words, self.max_len)

    def pairs(self, data: Sequence[Utterance]) -> list[TokenizedPair]:
        return [self.pair(u.text) for u in data]


def vocab_for(train: Sequence[Utterance], min_freq: int = 2, max_size: int = 8000) -> Vocabulary:
    return build_vocab([tokenize(preprocess(u.text)) for u in train], min_freq, max_size)


def emotion_seed(seed: int, emotion_index: int) -> int:
    return int(np.random.SeedSequence([seed, emotion_index]).generate_state(1, np.uint64)[0])


def _batches(n: int, size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + size] for i in range(0, n, size)]


def batch_logits(params: EncoderParams, pairs: Sequence[TokenizedPair], blend: BlendConfig,
                 batch_size: int = 64) -> np.ndarray:
    out = []
    for i in range(0, len(pairs), batch_size):
        chunk = pairs[i:i + batch_size]
        out.append(forward_logits(params, collate(chunk), blend).data)
    return np.concatenate(out) if out else np.zeros(0)


def _bce(z: np.ndarray, targets: np.ndarray) -> float:
    per = np.logaddexp(0.0, -np.abs(z)) + np.maximum(z, 0.0) - z * targets
    return float(per.mean()) if len(per) else 0.0


def mean_loss(params: EncoderParams, pairs: Sequence[TokenizedPair], targets: np.ndarray,
              blend: BlendConfig) -> float:
    return _bce(batch_logits(params, pairs, blend), targets)


def _scores(z: np.ndarray, targets: np.ndarray) -> tuple[float, float]:
    gold = targets.astype(bool)
    pred = predict_positive(probability(z))
    pos = f1(confusion(gold, pred)[0])[2]
    neg = f1(confusion(~gold, ~pred)[0])[2]
    return pos, (pos + neg) / 2.0


def binary_scores(params: EncoderParams, pairs: Sequence[TokenizedPair], targets: np.ndarray,
                  blend: BlendConfig) -> tuple[float, float]:
    """Positive-class F1 and binary macro-F1 (mean over the positive and negative class)."""
    return _scores(batch_logits(params, pairs, blend), targets)


@dataclass
class BinaryResult:
    emotion: str
    params: EncoderParams
    log: list[dict]
    best_epoch: int
    seed: int


def train_binary(emotion: str, train_pairs: Sequence[TokenizedPair], train_y: np.ndarray,
                 val_pairs: Sequence[TokenizedPair], val_y: np.ndarray,
                 enc_cfg: EncoderConfig, blend: BlendConfig, cfg: TrainConfig, seed: int,
                 early_stop: bool = True) -> BinaryResult:
    """Train one binary classifier; keep the epoch with the best validation macro-F1."""
    params = init_params(enc_cfg, seed)
    opt = Adam(params.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.Generator(np.random.PCG64(seed))
    records = []
    best, best_epoch, best_state = None, 0, None
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        total = 0.0
        for idx in _batches(len(train_pairs), cfg.batch_size, rng):
            batch = collate([train_pairs[i] for i in idx])
            opt.zero_grad()
            try:
                with T.Graph() as g:
                    loss = T.bce_loss(forward_logits(params, batch, blend, rng=rng), train_y[idx])
            except T.NumericError as exc:
                raise TrainingError(emotion, epoch, str(exc)) from exc
            if not math.isfinite(loss.item()):
                raise TrainingError(emotion, epoch)
            g.backward(loss)
            opt.step()
            total += loss.item() * len(idx)
        if not params.all_finite():
            raise TrainingError(emotion, epoch, "parameters diverged")
        # running mean over the epoch's minibatches (dropout on, weights moving)
        train_loss = total / max(len(train_pairs), 1)
        if len(val_pairs):
            z = batch_logits(params, val_pairs, blend)
            val_f1, val_macro = _scores(z, val_y)
            val_loss = _bce(z, val_y)
        else:
            val_f1 = val_macro = val_loss = math.nan
        records.append({"emotion": emotion, "epoch": epoch, "train_loss": train_loss,
                        "val_loss": val_loss, "val_f1": val_f1, "val_macro_f1": val_macro})
        log.debug("%s epoch %d loss %.4f val_macro_f1 %.4f", emotion, epoch, train_loss, val_macro)
        # macro-F1 first; validation loss breaks ties so flat F1 plateaus still count as progress
        score = (val_macro, -val_loss) if len(val_pairs) else (0.0, -train_loss)
        if best is None or score > best:
            best, best_epoch, stale = score, epoch, 0
            best_state = {k: v.copy() for k, v in params.state().items()}
        else:
            stale += 1
            if early_stop and stale >= cfg.patience:
                break
    params.load_state(best_state)
    return BinaryResult(emotion, params, records, best_epoch, seed)


@dataclass
class OneVsAll:
    classifiers: dict[str, EncoderParams]
    featurizer: Featurizer
    blend: BlendConfig
    log: list[dict] = field(default_factory=list)
    seeds: dict[str, int] = field(default_factory=dict)
    best_epochs: dict[str, int] = field(default_factory=dict)


def _train_job(args):
    return train_binary(*args)


def train_one_vs_all(train: Sequence[Utterance], vocab: Vocabulary, lexicon: PolarityLexicon | None,
                     enc_cfg: EncoderConfig, blend: BlendConfig, cfg: TrainConfig,
                     tau: float = DEFAULT_TAU, jobs: int = 1,
                     seed_overrides: Mapping[str, int] | None = None,
                     emotions: Sequence[str] = EMOTIONS) -> OneVsAll:
    """Six independent binary classifiers sharing one validation carve-out."""
    if blend.uses_polarity and lexicon is None:
        raise ValueError("polarity blending needs a lexicon")
    feat = Featurizer(vocab, lexicon if blend.uses_polarity else None, tau, enc_cfg.max_len)
    if cfg.val_frac > 0 and len(train) > 1:
        split = stratified_split(train, 1.0 - cfg.val_frac, seed=cfg.seed)
        fit, val = split.apply(sorted(train, key=lambda u: u.id))
    else:
        fit, val = list(train), []
    fit_pairs, val_pairs = feat.pairs(fit), feat.pairs(val)
    fit_y = np.array([[float(x) for x in u.labels] for u in fit]).reshape(len(fit), len(EMOTIONS))
    val_y = np.array([[float(x) for x in u.labels] for u in val]).reshape(len(val), len(EMOTIONS))
    overrides = dict(seed_overrides or {})
    jobs_args = []
    for e in emotions:
        j = EMOTIONS.index(e)
        seed = overrides.get(e, emotion_seed(cfg.seed, j))
        jobs_args.append((e, fit_pairs, fit_y[:, j], val_pairs, val_y[:, j], enc_cfg, blend, cfg, seed))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_train_job, jobs_args))
    else:
        results = [_train_job(a) for a in jobs_args]
    model = OneVsAll({}, feat, blend)
    for r in results:
        model.classifiers[r.emotion] = r.params
        model.log.extend(r.log)
        model.seeds[r.emotion] = r.seed
        model.best_epochs[r.emotion] = r.best_epoch
    return model


@dataclass
class Predictions:
    ids: list[str]
    probabilities: np.ndarray   # [n, 6]

    @property
    def labels(self) -> np.ndarray:
        return predict_positive(self.probabilities)

    def as_mapping(self) -> dict[str, tuple[bool, ...]]:
        return {i: tuple(bool(x) for x in row) for i, row in zip(self.ids, self.labels)}

    def to_csv(self) -> str:
        head = ["id"] + [f"p_{e}" for e in EMOTIONS] + list(EMOTIONS)
        lines = [",".join(head)]
        for i, p, y in zip(self.ids, self.probabilities, self.labels):
            lines.append(",".join([_csv_field(i)] + [repr(float(x)) for x in p] + [str(int(b)) for b in y]))
        return "\n".join(lines) + "\n"


def _csv_field(s: str) -> str:
    if any(c in s for c in ',"\n\r'):
        return '"' + s.replace('"', '""') + '"'
    return s


def read_predictions_csv(path) -> Predictions:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    ids = [r["id"] for r in rows]
    probs = np.array([[float(r[f"p_{e}"]) for e in EMOTIONS] for r in rows]).reshape(len(rows), len(EMOTIONS))
    return Predictions(ids, probs)


def predict(model: OneVsAll, utterances: Sequence[Utterance], vocab_digest: str | None = None) -> Predictions:
    if vocab_digest is not None and vocab_digest != model.featurizer.vocab.digest():
        raise CompatibilityError("vocabulary hash does not match the checkpoint")
    pairs = model.featurizer.pairs(utterances)
    probs = np.zeros((len(utterances), len(EMOTIONS)))
    for j, e in enumerate(EMOTIONS):
        if e in model.classifiers:
            probs[:, j] = probability(batch_logits(model.classifiers[e], pairs, model.blend))
    return Predictions([u.id for u in utterances], probs)


def gold_matrix(data: Sequence[Utterance]) -> np.ndarray:
    return np.array([u.labels for u in data], dtype=bool).reshape(len(data), len(EMOTIONS))


@dataclass
class ExperimentResult:
    reports: list[EvalReport]
    aggregate: dict
    models: list[OneVsAll] = field(default_factory=list, repr=False)
    splits: list[SplitAssignment] = field(default_factory=list, repr=False)
    predictions: list[Predictions] = field(default_factory=list, repr=False)


def blend_for(mode: str, blend: BlendConfig | None = None) -> BlendConfig:
    if mode == "baseline":
        return BASELINE
    if mode == "polarity":
        return blend if blend is not None and blend.uses_polarity else BlendConfig()
    raise ValueError(f"unknown experiment mode {mode!r}")


def config_hash(*objs) -> str:
    blob = json.dumps([asdict(o) for o in objs], sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def run_experiment(data: Sequence[Utterance], mode: str, seeds: Sequence[int],
                   lexicon: PolarityLexicon | None = None, enc_cfg: EncoderConfig | None = None,
                   blend: BlendConfig | None = None, cfg: TrainConfig | None = None,
                   tau: float = DEFAULT_TAU, dataset_name: str = "dataset", jobs: int = 1,
                   min_freq: int = 2) -> ExperimentResult:
    """Split, build vocab, train, predict and score once per seed."""
    blend = blend_for(mode, blend)
    if blend.uses_polarity and lexicon is None:
        raise ValueError("mode 'polarity' needs a lexicon")
    cfg = cfg or TrainConfig()
    result = ExperimentResult([], {})
    for seed in seeds:
        split = stratified_split(data, 0.8, seed=seed)
        train, test = split.apply(sorted(data, key=lambda u: u.id))
        vocab = vocab_for(train, min_freq=min_freq)
        ecfg = replace(enc_cfg, vocab_size=len(vocab)) if enc_cfg else EncoderConfig(vocab_size=len(vocab))
        model = train_one_vs_all(train, vocab, lexicon, ecfg, blend, replace(cfg, seed=seed), tau, jobs)
        preds = predict(model, test)
        report = evaluate(gold_matrix(test), preds.labels, {
            "dataset": dataset_name, "mode": mode, "blend": blend.mode, "seed": seed,
            "config_hash": config_hash(ecfg, blend, replace(cfg, seed=seed)), "vocab_hash": vocab.digest(),
            "n_train": len(train), "n_test": len(test)})
        result.reports.append(report)
        result.models.append(model)
        result.splits.append(split)
        result.predictions.append(preds)
    micro = np.array([r.micro for r in result.reports])
    macro = np.array([r.macro for r in result.reports])
    result.aggregate = {
        "mode": mode, "seeds": list(seeds),
        "micro_mean": float(micro.mean()), "micro_std": float(micro.std()),
        "macro_mean": float(macro.mean()), "macro_std": float(macro.std()),
    }
    return result


def overfit_probe(data: Sequence[Utterance], emotion: str = "joy", epochs: int = 30,
                  seed: int = 0, learning_rate: float = 1e-3) -> tuple[float, list[dict]]:
    """Fit one classifier on a handful of examples with no held-out data; return final loss."""
    vocab = vocab_for(data, min_freq=1)
    enc_cfg = EncoderConfig(vocab_size=len(vocab), dropout_rate=0.0)
    feat = Featurizer(vocab, max_len=enc_cfg.max_len)
    pairs = feat.pairs(data)
    y = gold_matrix(data)[:, EMOTIONS.index(emotion)].astype(float)
    cfg = TrainConfig(epochs=epochs, batch_size=8, learning_rate=learning_rate, patience=epochs, val_frac=0.0)
    res = train_binary(emotion, pairs, y, [], np.zeros(0), enc_cfg, BASELINE, cfg, seed, early_stop=False)
    return mean_loss(res.params, pairs, y, BASELINE), res.log


def save_model(model: OneVsAll, directory, extra: dict | None = None) -> None:
    """Vocabulary plus one PATN checkpoint and JSON sidecar per emotion."""
    d = Path(directory)
    (d / "checkpoints").mkdir(parents=True, exist_ok=True)
    vocab = model.featurizer.vocab
    vocab.save(d / "vocab.txt")
    for e, params in model.classifiers.items():
        params.save(d / "checkpoints" / f"{e}.patn", {
            "emotion": e, "seed": model.seeds.get(e), "best_epoch": model.best_epochs.get(e),
            "vocab_hash": vocab.digest(), "blend": asdict(model.blend), "tau": model.featurizer.tau,
            **(extra or {}),
        })
    with open(d / "train_log.jsonl", "w", encoding="utf-8") as fh:
        for rec in model.log:
            fh.write(json.dumps(rec) + "\n")


def load_model(directory, lexicon: PolarityLexicon | None = None) -> OneVsAll:
    d = Path(directory)
    vocab = Vocabulary.load(d / "vocab.txt")
    digest = vocab.digest()
    classifiers, seeds, epochs, blends, taus = {}, {}, {}, set(), set()
    for e in EMOTIONS:
        path = d / "checkpoints" / f"{e}.patn"
        if not path.exists():
            continue
        params, meta = EncoderParams.load(path)
        if meta.get("vocab_hash") != digest:
            raise CompatibilityError(f"{path.name}: vocabulary hash does not match {d / 'vocab.txt'}")
        if params.config.vocab_size != len(vocab):
            raise CompatibilityError(f"{path.name}: embedding table has {params.config.vocab_size} rows, vocab has {len(vocab)}")
        classifiers[e] = params
        seeds[e], epochs[e] = meta.get("seed"), meta.get("best_epoch")
        blends.add(json.dumps(meta["blend"], sort_keys=True))
        taus.add(meta.get("tau", DEFAULT_TAU))
    if not classifiers:
        raise FileNotFoundError(f"no checkpoints under {d / 'checkpoints'}")
    if len(blends) > 1 or len(taus) > 1:
        raise CompatibilityError("checkpoints disagree on blend settings")
    blend = BlendConfig(**json.loads(blends.pop()))
    if blend.uses_polarity and lexicon is None:
        raise CompatibilityError("polarity checkpoints need the lexicon they were trained with")
    max_len = next(iter(classifiers.values())).config.max_len
    feat = Featurizer(vocab, lexicon if blend.uses_polarity else None, taus.pop(), max_len)
    return OneVsAll(classifiers, feat, blend, [], seeds, epochs)
