"""Cross-entropy loss and the AdamW optimizer with decoupled weight decay."""

from __future__ import annotations

from typing import Dict

import numpy as np

from . import tensor as T
from .tensor import DomainError, Tensor


def _log_softmax_pick(logits: Tensor, onehot: np.ndarray) -> Tensor:
    # stable log-sum-exp; the max shift is treated as a constant, which gives
    # the exact gradient because softmax is shift invariant
    if not np.all(np.isfinite(logits.data)):
        raise DomainError("cross_entropy requires finite logits")
    m = logits.data.max(axis=-1, keepdims=True)
    shifted = T.sub(logits, Tensor(m))
    lse = T.log(T.tsum(T.exp(shifted), axis=-1, keepdims=False))
    picked = T.tsum(T.mul(shifted, Tensor(onehot)), axis=-1, keepdims=False)
    return T.sub(lse, picked)


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    """-log softmax(logits)[label] for a single 2-logit prediction."""
    if logits.shape != (2,):
        raise T.ShapeError(f"expected logits of shape (2,), got {logits.shape}")
    if label not in (0, 1):
        raise DomainError(f"label must be 0 or 1, got {label!r}")
    onehot = np.zeros(2)
    onehot[label] = 1.0
    return _log_softmax_pick(logits, onehot)


def cross_entropy_batch(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy over a batch of [B, 2] logits."""
    labels = np.asarray(labels)
    if np.any((labels != 0) & (labels != 1)):
        raise DomainError("labels must be 0 or 1")
    onehot = np.zeros(logits.shape)
    onehot[np.arange(labels.size), labels] = 1.0
    losses = _log_softmax_pick(logits, onehot)
    return T.tmean(losses, axis=0)


def clip_grad_norm(params: Dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm.
    Returns the pre-clip norm."""
    if max_norm <= 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    sq = 0.0
    for p in params.values():
        if p.grad is not None:
            sq += float(np.sum(p.grad * p.grad))
    norm = float(np.sqrt(sq))
    if norm > max_norm:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm


class AdamW:
    """AdamW with weight decay applied directly to the parameters, outside
    the gradient/moment path."""

    def __init__(self, params: Dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.01):
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValueError("betas must be in [0, 1)")
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise T.ShapeError(f"grad shape {g.shape} != param shape {p.data.shape} for {k}")
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            mhat = m / bc1
            vhat = v / bc2
            # decay applied multiplicatively so the zero-gradient contraction
            # factor (1 - lr*wd) is exact in floating point
            p.data *= 1.0 - self.lr * self.weight_decay
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
