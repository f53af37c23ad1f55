"""Toy pre-norm transformer encoder with an optional polarity-word stream.

Three blend modes share one parameter layout:

``none``
    attention-pool the primary states; the polarity half of the pooled
    vector is zero.
``pooled-concat``
    attention-pool primary and polarity states separately, scale them by
    ``w_primary`` / ``w_polarity`` and concatenate.
``attention-keys``
    in the last layer, primary queries attend over primary and polarity
    keys; each block is softmaxed on its own, scaled by its weight and the
    two blocks are concatenated so every row still sums to one.

An utterance without polarity words always takes the ``none`` path
(primary weight 1.0), so all three modes agree on it.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import special

from . import tensor as T
from .tensor import Tensor
from .text import PAD, TokenizedPair

MASK_VALUE = -1e9
BLEND_MODES = ("none", "pooled-concat", "attention-keys")


class ConfigError(ValueError):
    pass


class ContractError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    max_len: int = 64
    dropout_rate: float = 0.1

    def __post_init__(self):
        for name in ("vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_len"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")


@dataclass(frozen=True)
class BlendConfig:
    mode: str = "pooled-concat"
    w_primary: float = 0.75
    w_polarity: float = 0.25

    def __post_init__(self):
        if self.mode not in BLEND_MODES:
            raise ConfigError(f"unknown blend mode {self.mode!r}; expected one of {BLEND_MODES}")
        if not (0.0 <= self.w_primary <= 1.0 and 0.0 <= self.w_polarity <= 1.0):
            raise ConfigError("blend weights must lie in [0, 1]")
        if abs(self.w_primary + self.w_polarity - 1.0) > 1e-9:
            raise ConfigError(f"blend weights must sum to 1, got {self.w_primary} + {self.w_polarity}")

    @classmethod
    def from_ratio(cls, primary: float, polarity: float, mode: str = "pooled-concat") -> "BlendConfig":
        total = primary + polarity
        if total <= 0:
            raise ConfigError("blend weights must have a positive sum")
        return cls(mode, primary / total, polarity / total)

    @property
    def uses_polarity(self) -> bool:
        return self.mode != "none"


BASELINE = BlendConfig(mode="none")


@dataclass
class EncoderParams:
    config: EncoderConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def parameters(self) -> list[Tensor]:
        return list(self.tensors.values())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.config, {k: Tensor(v.data.copy(), requires_grad=True, name=k)
                                           for k, v in self.tensors.items()})

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.tensors.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.tensors) ^ set(state)
        if missing:
            raise ContractError(f"checkpoint tensor names differ: {sorted(missing)}")
        for k, t in self.tensors.items():
            if state[k].shape != t.shape:
                raise ContractError(f"{k}: checkpoint shape {state[k].shape} != {t.shape}")
            t.data = np.array(state[k], dtype=T.DTYPE)

    def all_finite(self) -> bool:
        return T.parameters_finite(self.tensors.values())

    def save(self, path, sidecar: dict | None = None) -> None:
        T.save_tensors(path, self.tensors)
        if sidecar is not None:
            meta = {"encoder": asdict(self.config), **sidecar}
            with open(f"{path}.json", "w", encoding="utf-8") as fh:
                json.dump(meta, fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path, config: EncoderConfig | None = None) -> tuple["EncoderParams", dict]:
        meta = {}
        try:
            with open(f"{path}.json", encoding="utf-8") as fh:
                meta = json.load(fh)
        except FileNotFoundError:
            if config is None:
                raise
        config = config or EncoderConfig(**meta["encoder"])
        params = init_params(config, 0)
        params.load_state(T.load_tensors(path))
        return params, meta


def _layer_names(i: int) -> list[str]:
    return [f"l{i}.{n}" for n in ("ln1.g", "ln1.b", "wq", "bq", "wk", "wv", "bv", "wo", "bo",
                                  "ln2.g", "ln2.b", "w1", "b1", "w2", "b2")]


def init_params(config: EncoderConfig, seed: int, std: float = 0.02) -> EncoderParams:
    """Weights ~ N(0, std^2) from numpy's PCG64 generator; layer-norm gains 1, all biases 0."""
    rng = np.random.Generator(np.random.PCG64(seed))
    d, f = config.d_model, config.d_ff
    shapes: dict[str, tuple[int, ...]] = {
        "tok_emb": (config.vocab_size, d),
        "pos_emb": (config.max_len, d),
        "seg_offset": (d,),
    }
    for i in range(config.n_layers):
        for name in _layer_names(i):
            kind = name.split(".", 1)[1]
            shapes[name] = {
                "ln1.g": (d,), "ln1.b": (d,), "ln2.g": (d,), "ln2.b": (d,),
                "wq": (d, d), "wk": (d, d), "wv": (d, d), "wo": (d, d),
                "bq": (d,), "bv": (d,), "bo": (d,),
                "w1": (d, f), "b1": (f,), "w2": (f, d), "b2": (d,),
            }[kind]
    shapes.update({"lnf.g": (d,), "lnf.b": (d,), "pool_q": (d,), "pool_q_pol": (d,),
                   "cls_w": (2 * d, 1), "cls_b": (1,)})
    tensors = {}
    for name, shape in shapes.items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            data = np.ones(shape)
        elif leaf == "b" or name == "cls_b" or leaf in ("bq", "bv", "bo", "b1", "b2"):
            data = np.zeros(shape)
        else:
            data = rng.normal(0.0, std, size=shape)
        tensors[name] = Tensor(data, requires_grad=True, name=name)
    return EncoderParams(config, tensors)


@dataclass(frozen=True)
class Batch:
    ids: np.ndarray        # [B, L] int
    lens: np.ndarray       # [B]
    pol_ids: np.ndarray    # [B, P] int (PAD-filled)
    pol_lens: np.ndarray   # [B]

    @property
    def size(self) -> int:
        return self.ids.shape[0]


def collate(pairs: Sequence[TokenizedPair], trim: bool = True) -> Batch:
    """Stack pairs; with ``trim`` the PAD tail shared by the whole batch is dropped."""
    lens = np.array([p.primary_len for p in pairs], dtype=np.int64)
    width = int(lens.max()) if trim else len(pairs[0].primary_ids)
    ids = np.array([p.primary_ids[:width] for p in pairs], dtype=np.int64)
    pol_lens = np.array([p.polarity_len for p in pairs], dtype=np.int64)
    P = int(pol_lens.max()) if len(pairs) else 0
    pol = np.full((len(pairs), P), PAD, dtype=np.int64)
    for i, p in enumerate(pairs):
        pol[i, :p.polarity_len] = p.polarity_ids
    return Batch(ids, lens, pol, pol_lens)


def _additive_mask(lens: np.ndarray, width: int) -> np.ndarray:
    valid = np.arange(width)[None, :] < lens[:, None]
    return np.where(valid, 0.0, MASK_VALUE)


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return T.add(T.matmul(x, w), b)


def _heads(x: Tensor, n_heads: int) -> Tensor:
    B, L, d = x.shape
    return T.transpose(T.reshape(x, (B, L, n_heads, d // n_heads)), (0, 2, 1, 3))


def _merge(x: Tensor) -> Tensor:
    B, h, L, dh = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1, 3)), (B, L, h * dh))


def _block_weights(batch: Batch, blend: BlendConfig) -> tuple[np.ndarray, np.ndarray]:
    has = batch.pol_lens > 0
    wp = np.where(has, blend.w_primary, 1.0)
    ws = np.where(has, blend.w_polarity, 0.0)
    return wp, ws


def _attention(params: EncoderParams, i: int, x: Tensor, key_mask: np.ndarray,
               pol: Tensor | None, pol_mask: np.ndarray | None, weights, trace: dict | None,
               rng) -> Tensor:
    cfg = params.config
    p = lambda n: params[f"l{i}.{n}"]  # noqa: E731
    h, dh = cfg.n_heads, cfg.d_model // cfg.n_heads
    scale = 1.0 / math.sqrt(dh)
    xn = T.layer_norm(x, p("ln1.g"), p("ln1.b"))
    q = _heads(_linear(xn, p("wq"), p("bq")), h)
    k = _heads(T.matmul(xn, p("wk")), h)
    v = _heads(_linear(xn, p("wv"), p("bv")), h)
    scores = T.add(T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), scale), key_mask[:, None, None, :])
    attn = T.softmax(scores, axis=-1)
    if pol is None:
        ctx = T.matmul(attn, v)
        if trace is not None:
            trace[f"attn{i}"] = attn.data
    else:
        pn = T.layer_norm(pol, p("ln1.g"), p("ln1.b"))
        ks = _heads(T.matmul(pn, p("wk")), h)
        vs = _heads(_linear(pn, p("wv"), p("bv")), h)
        s_scores = T.add(T.mul(T.matmul(q, T.transpose(ks, (0, 1, 3, 2))), scale), pol_mask[:, None, None, :])
        s_attn = T.softmax(s_scores, axis=-1)
        wp, ws = weights
        a_p = T.mul(attn, wp[:, None, None, None])
        a_s = T.mul(s_attn, ws[:, None, None, None])
        ctx = T.add(T.matmul(a_p, v), T.matmul(a_s, vs))
        if trace is not None:
            trace[f"attn{i}"] = np.concatenate([a_p.data, a_s.data], axis=-1)
    out = _linear(_merge(ctx), p("wo"), p("bo"))
    return T.dropout(out, cfg.dropout_rate, rng)


def _ffn(params: EncoderParams, i: int, x: Tensor, rng) -> Tensor:
    p = lambda n: params[f"l{i}.{n}"]  # noqa: E731
    xn = T.layer_norm(x, p("ln2.g"), p("ln2.b"))
    hidden = T.gelu(_linear(xn, p("w1"), p("b1")))
    return T.dropout(_linear(hidden, p("w2"), p("b2")), params.config.dropout_rate, rng)


def encode_polarity_batch(params: EncoderParams, batch: Batch) -> Tensor:
    """Polarity word embeddings plus the segment offset; no positions."""
    return T.add(T.embed(params["tok_emb"], batch.pol_ids), params["seg_offset"])


def encode_primary_batch(params: EncoderParams, batch: Batch, blend: BlendConfig = BASELINE,
                         rng: np.random.Generator | None = None, trace: dict | None = None) -> Tensor:
    cfg = params.config
    B, L = batch.ids.shape
    if L > cfg.max_len:
        raise ContractError(f"sequence length {L} exceeds max_len {cfg.max_len}")
    x = T.add(T.embed(params["tok_emb"], batch.ids), T.embed(params["pos_emb"], np.arange(L)))
    x = T.dropout(x, cfg.dropout_rate, rng)
    key_mask = _additive_mask(batch.lens, L)
    keys_mode = blend.mode == "attention-keys" and batch.pol_ids.shape[1] > 0
    pol = pol_mask = weights = None
    if keys_mode:
        pol = encode_polarity_batch(params, batch)
        pol_mask = _additive_mask(batch.pol_lens, batch.pol_ids.shape[1])
        weights = _block_weights(batch, blend)
    for i in range(cfg.n_layers):
        last = i == cfg.n_layers - 1
        x = T.add(x, _attention(params, i, x, key_mask, pol if last else None,
                                pol_mask, weights, trace, rng))
        x = T.add(x, _ffn(params, i, x, rng))
    return T.layer_norm(x, params["lnf.g"], params["lnf.b"])


def _attention_pool(states: Tensor, query: Tensor, mask: np.ndarray) -> Tensor:
    B, L, d = states.shape
    scores = T.reshape(T.matmul(states, T.reshape(query, (d, 1))), (B, L))
    a = T.softmax(T.add(scores, mask), axis=-1)
    return T.reshape(T.matmul(T.reshape(a, (B, 1, L)), states), (B, d))


def blend_pool_batch(params: EncoderParams, batch: Batch, h_primary: Tensor, blend: BlendConfig) -> Tensor:
    B, L, d = h_primary.shape
    pooled = _attention_pool(h_primary, params["pool_q"], _additive_mask(batch.lens, L))
    P = batch.pol_ids.shape[1]
    if blend.mode != "pooled-concat" or P == 0:
        return T.concat([pooled, Tensor(np.zeros((B, d)))], axis=-1)
    h_pol = encode_polarity_batch(params, batch)
    pooled_pol = _attention_pool(h_pol, params["pool_q_pol"], _additive_mask(batch.pol_lens, P))
    wp, ws = _block_weights(batch, blend)
    return T.concat([T.mul(pooled, wp[:, None]), T.mul(pooled_pol, ws[:, None])], axis=-1)


def classify(pooled: Tensor, params: EncoderParams) -> Tensor:
    w = params["cls_w"]
    if pooled.shape[-1] != w.shape[0]:
        raise ContractError(f"pooled dim {pooled.shape[-1]} != classifier input {w.shape[0]}")
    logits = T.add(T.matmul(pooled if pooled.ndim == 2 else T.reshape(pooled, (1, -1)), w), params["cls_b"])
    return T.reshape(logits, (logits.shape[0],))


def forward_logits(params: EncoderParams, batch: Batch, blend: BlendConfig = BASELINE,
                   rng: np.random.Generator | None = None, trace: dict | None = None) -> Tensor:
    if blend.mode == "none" and batch.pol_ids.shape[1]:
        batch = Batch(batch.ids, batch.lens, batch.pol_ids[:, :0], np.zeros_like(batch.pol_lens))
    h = encode_primary_batch(params, batch, blend, rng, trace)
    return classify(blend_pool_batch(params, batch, h, blend), params)


# single-utterance views -----------------------------------------------------

def _single(pair: TokenizedPair, config: EncoderConfig) -> Batch:
    if len(pair.primary_ids) > config.max_len:
        raise ContractError(f"sequence length {len(pair.primary_ids)} exceeds max_len {config.max_len}")
    return collate([pair], trim=False)


def encode_primary(pair: TokenizedPair, params: EncoderParams, blend: BlendConfig = BASELINE) -> Tensor:
    """Final hidden states ``[len(primary_ids), d_model]`` for one utterance."""
    h = encode_primary_batch(params, _single(pair, params.config), blend)
    return T.reshape(h, h.shape[1:])


def encode_polarity(pair: TokenizedPair, params: EncoderParams) -> Tensor:
    h = encode_polarity_batch(params, _single(pair, params.config))
    return T.reshape(h, h.shape[1:])


def blend_pool(pair: TokenizedPair, params: EncoderParams, blend: BlendConfig) -> Tensor:
    batch = _single(pair, params.config)
    h = encode_primary_batch(params, batch, blend)
    pooled = blend_pool_batch(params, batch, h, blend)
    return T.reshape(pooled, pooled.shape[1:])


def logit(pair: TokenizedPair, params: EncoderParams, blend: BlendConfig = BASELINE) -> float:
    return forward_logits(params, _single(pair, params.config), blend).item()


def probability(logits: np.ndarray) -> np.ndarray:
    return special.expit(logits)


def predict_positive(prob: np.ndarray) -> np.ndarray:
    """Threshold 0.5; an exact 0.5 counts as positive."""
    return np.asarray(prob) >= 0.5
