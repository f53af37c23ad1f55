"""Finite-difference checking of the full encoder against an independent forward pass.

The reference forward below is plain numpy and never touches the tape. It takes
every parameter with an extra leading axis of size K (or 1, broadcast), so all
the perturbations of a finite-difference sweep over one tensor are evaluated in
one vectorized call. Activations upstream of that tensor keep K = 1 and are
computed once.
"""

from __future__ import annotations

import math
from typing import Mapping

import numpy as np
from scipy import special

from . import tensor as T
from .tensor import relative_error
from .model import MASK_VALUE, Batch, BlendConfig, EncoderParams, forward_logits


def _ln(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def _softmax(s):
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _split(x, h):
    K, B, L, d = x.shape
    return x.reshape(K, B, L, h, d // h).transpose(0, 1, 3, 2, 4)


def _vec(w):      # [K, d] -> broadcastable over [K, B, L, d]
    return w[:, None, None, :]


def _mm(x, w):
    """``x [K|1, B, L, m] @ w [K|1, m, n]``; shared weights become one GEMM."""
    if w.shape[0] == 1:
        return (x.reshape(-1, x.shape[-1]) @ w[0]).reshape(x.shape[:-1] + w.shape[-1:])
    return x @ w[:, None, :, :]


def reference_logits(state: Mapping[str, np.ndarray], batch: Batch, blend: BlendConfig,
                     n_layers: int, n_heads: int) -> np.ndarray:
    """Logits ``[K, B]`` for K stacked parameter sets, dropout off."""
    s = state
    ids, lens = batch.ids, batch.lens
    B, L = ids.shape
    P = batch.pol_ids.shape[1] if blend.mode != "none" else 0
    has = batch.pol_lens > 0 if P else np.zeros(B, dtype=bool)
    wp = np.where(has, blend.w_primary, 1.0)
    ws = np.where(has, blend.w_polarity, 0.0)
    mask = np.where(np.arange(L)[None, :] < lens[:, None], 0.0, MASK_VALUE)          # [B, L]
    x = s["tok_emb"][:, ids] + s["pos_emb"][:, None, :L]
    pol = None
    if P:
        pol = s["tok_emb"][:, batch.pol_ids] + _vec(s["seg_offset"])
        pmask = np.where(np.arange(P)[None, :] < batch.pol_lens[:, None], 0.0, MASK_VALUE)
    d = x.shape[-1]
    scale = 1.0 / math.sqrt(d // n_heads)
    for i in range(n_layers):
        w = lambda n: s[f"l{i}.{n}"]  # noqa: E731
        xn = _ln(x, _vec(w("ln1.g")), _vec(w("ln1.b")))
        q = _split(_mm(xn, w("wq")) + _vec(w("bq")), n_heads)
        k = _split(_mm(xn, w("wk")), n_heads)
        v = _split(_mm(xn, w("wv")) + _vec(w("bv")), n_heads)
        a = _softmax(q @ k.swapaxes(-1, -2) * scale + mask[None, :, None, None, :])
        if i == n_layers - 1 and blend.mode == "attention-keys" and P:
            pn = _ln(pol, _vec(w("ln1.g")), _vec(w("ln1.b")))
            ks = _split(_mm(pn, w("wk")), n_heads)
            vs = _split(_mm(pn, w("wv")) + _vec(w("bv")), n_heads)
            a_s = _softmax(q @ ks.swapaxes(-1, -2) * scale + pmask[None, :, None, None, :])
            ctx = wp[None, :, None, None, None] * (a @ v) + ws[None, :, None, None, None] * (a_s @ vs)
        else:
            ctx = a @ v
        K = ctx.shape[0]
        merged = ctx.transpose(0, 1, 3, 2, 4).reshape(K, B, L, d)
        x = x + _mm(merged, w("wo")) + _vec(w("bo"))
        hid = _mm(_ln(x, _vec(w("ln2.g")), _vec(w("ln2.b"))), w("w1")) + _vec(w("b1"))
        hid = hid * 0.5 * (1.0 + special.erf(hid / math.sqrt(2.0)))
        x = x + _mm(hid, w("w2")) + _vec(w("b2"))
    x = _ln(x, _vec(s["lnf.g"]), _vec(s["lnf.b"]))
    cls_w = s["cls_w"][:, :, 0]
    att = _softmax((x * _vec(s["pool_q"])).sum(-1) + mask[None])
    pooled = (att[..., None] * x).sum(-2)
    if blend.mode == "pooled-concat" and P:
        att_s = _softmax((pol * _vec(s["pool_q_pol"])).sum(-1) + pmask[None])
        pooled_s = (att_s[..., None] * pol).sum(-2)
        z = (wp[None, :, None] * pooled * cls_w[:, None, :d]).sum(-1)
        z = z + (ws[None, :, None] * pooled_s * cls_w[:, None, d:]).sum(-1)
    else:
        z = (pooled * cls_w[:, None, :d]).sum(-1)     # the zero-padded polarity half adds nothing
    return z + s["cls_b"]


def reference_loss(state: Mapping[str, np.ndarray], batch: Batch, targets: np.ndarray,
                   blend: BlendConfig, n_layers: int, n_heads: int) -> np.ndarray:
    z = reference_logits(state, batch, blend, n_layers, n_heads)
    per = np.logaddexp(0.0, -np.abs(z)) + np.maximum(z, 0.0) - z * targets[None, :]
    return per.mean(axis=1)


def encoder_grad_check(params: EncoderParams, batch: Batch, targets: np.ndarray, blend: BlendConfig,
                       h: float = 1e-3, chunk: int = 512) -> float:
    """Max relative error of tape gradients of the mean BCE loss vs central differences.

    Uses the five-point central stencil, whose O(h^4) truncation term stays far
    below tolerance at a step large enough to keep round-off small too.
    """
    cfg = params.config
    params.zero_grad()
    with T.Graph() as g:
        loss = T.bce_loss(forward_logits(params, batch, blend), targets)
    g.backward(loss)
    base = {n: params[n].data[None] for n in params.tensors}
    targets = np.asarray(targets, dtype=float)
    offsets = np.array([h, -h, 2 * h, -2 * h])
    analytic, numeric = [], []
    for name, p in params.tensors.items():
        analytic.append(p.grad.reshape(-1))
        for start in range(0, p.size, chunk):
            idx = np.arange(start, min(start + chunk, p.size))
            K = 4 * len(idx)
            moved = np.repeat(base[name], K, axis=0)
            moved.reshape(K, -1)[np.arange(K), np.repeat(idx, 4)] += np.tile(offsets, len(idx))
            f = reference_loss({**base, name: moved}, batch, targets, blend, cfg.n_layers, cfg.n_heads)
            f = np.broadcast_to(f, (K,)).reshape(len(idx), 4)     # unused tensors never pick up K
            numeric.append((8.0 * (f[:, 0] - f[:, 1]) - (f[:, 2] - f[:, 3])) / (12.0 * h))
    analytic, numeric = np.concatenate(analytic), np.concatenate(numeric)
    return float(relative_error(analytic, numeric).max())
