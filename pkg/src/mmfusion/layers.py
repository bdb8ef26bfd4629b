"""Shared neural building blocks: parameter store, linear layers,
multi-head attention, post-norm transformer blocks, positional encodings."""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from . import tensor as T
from .tensor import Tensor


class ParamStore(dict):
    """Named parameter registry; every entry is a requires_grad Tensor."""

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self:
            raise KeyError(f"duplicate parameter name: {name}")
        t = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True, name=name)
        self[name] = t
        return t

    def add_normal(self, name: str, shape, rng, fan_in: Optional[int] = None) -> Tensor:
        fan = fan_in if fan_in is not None else shape[0]
        return self.add(name, rng.standard_normal(shape) / math.sqrt(max(fan, 1)))

    def zero_grads(self) -> None:
        for t in self.values():
            t.zero_grad()

    def named(self):
        return sorted(self.items())


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    y = T.matmul(x, w)
    if b is not None:
        y = T.add(y, b)
    return y


def dropout(x: Tensor, p: float, train: bool, rng) -> Tensor:
    if not train or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(np.float64) / (1.0 - p)
    return T.mul(x, Tensor(keep))


def positional_encoding(length: int, d_model: int) -> np.ndarray:
    """Fixed sinusoidal encodings, [length, d_model]."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(d_model, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2.0 * (i // 2)) / d_model)
    enc = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return enc


def add_positional(x: Tensor) -> Tensor:
    L, d = x.shape[-2], x.shape[-1]
    return T.add(x, Tensor(positional_encoding(L, d)))


def init_attention_block(params: ParamStore, prefix: str, d_model: int,
                         ff_dim: int, rng) -> None:
    for w in ("Wq", "Wk", "Wv", "Wo"):
        params.add_normal(f"{prefix}.{w}", (d_model, d_model), rng)
    params.add_normal(f"{prefix}.ff1_W", (d_model, ff_dim), rng)
    params.add(f"{prefix}.ff1_b", np.zeros(ff_dim))
    params.add_normal(f"{prefix}.ff2_W", (ff_dim, d_model), rng)
    params.add(f"{prefix}.ff2_b", np.zeros(d_model))
    for ln in ("ln1", "ln2"):
        params.add(f"{prefix}.{ln}_g", np.ones(d_model))
        params.add(f"{prefix}.{ln}_b", np.zeros(d_model))


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    """[..., L, d] -> [..., h, L, d_k]"""
    *lead, L, d = x.shape
    dk = d // n_heads
    x = T.reshape(x, tuple(lead) + (L, n_heads, dk))
    n = x.ndim
    axes = tuple(range(n - 3)) + (n - 2, n - 3, n - 1)
    return T.transpose(x, axes)


def _merge_heads(x: Tensor) -> Tensor:
    """[..., h, L, d_k] -> [..., L, h*d_k]"""
    n = x.ndim
    axes = tuple(range(n - 3)) + (n - 2, n - 3, n - 1)
    x = T.transpose(x, axes)
    *lead, L, h, dk = x.shape
    return T.reshape(x, tuple(lead) + (L, h * dk))


def multi_head_attention(q_seq: Tensor, kv_seq: Tensor, params: ParamStore,
                         prefix: str, n_heads: int, return_weights: bool = False):
    """Scaled dot-product attention with queries from ``q_seq`` and
    keys/values from ``kv_seq``; output has the length of ``q_seq``."""
    d = q_seq.shape[-1]
    if kv_seq.shape[-1] != d:
        raise T.ShapeError(
            f"attention d_model mismatch: query {q_seq.shape} vs key/value {kv_seq.shape}")
    q = _split_heads(linear(q_seq, params[f"{prefix}.Wq"]), n_heads)
    k = _split_heads(linear(kv_seq, params[f"{prefix}.Wk"]), n_heads)
    v = _split_heads(linear(kv_seq, params[f"{prefix}.Wv"]), n_heads)
    dk = d // n_heads
    logits = T.scale(T.matmul(q, T.transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))),
                     1.0 / math.sqrt(dk))
    weights = T.softmax_lastaxis(logits)
    ctx = _merge_heads(T.matmul(weights, v))
    out = linear(ctx, params[f"{prefix}.Wo"])
    if return_weights:
        return out, weights
    return out


def transformer_block(q_seq: Tensor, kv_seq: Tensor, params: ParamStore, prefix: str,
                      n_heads: int, drop: float = 0.0, train: bool = False,
                      rng=None) -> Tensor:
    """Post-norm block: attention + residual + LN, feed-forward + residual + LN.

    Self-attention when ``kv_seq is q_seq``; cross-attention otherwise.
    """
    att = multi_head_attention(q_seq, kv_seq, params, prefix, n_heads)
    att = dropout(att, drop, train, rng)
    x = T.layer_norm(T.add(q_seq, att), params[f"{prefix}.ln1_g"], params[f"{prefix}.ln1_b"])
    h = T.relu(linear(x, params[f"{prefix}.ff1_W"], params[f"{prefix}.ff1_b"]))
    f = linear(h, params[f"{prefix}.ff2_W"], params[f"{prefix}.ff2_b"])
    f = dropout(f, drop, train, rng)
    return T.layer_norm(T.add(x, f), params[f"{prefix}.ln2_g"], params[f"{prefix}.ln2_b"])
