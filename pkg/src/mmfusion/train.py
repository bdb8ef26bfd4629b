"""Training loop (cross-entropy + AdamW), chronological splitting,
validation-based model selection, and evaluation."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .data import MultimodalSample, collate
from .errors import InputError, TrainingDiverged
from .fusion import FusionModel, load_checkpoint, save_checkpoint
from .layers import ParamStore
from .metrics import MetricsReport, metrics_from_predictions
from .optim import AdamW, clip_grad_norm, cross_entropy_batch

EVAL_BATCH = 64


@dataclass
class Checkpoint:
    config: ModelConfig
    params: ParamStore

    def save(self, path) -> None:
        save_checkpoint(path, self.config, self.params)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        config, params = load_checkpoint(path)
        return cls(config=config, params=params)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val: dict

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "train_loss": self.train_loss, "val": self.val}


@dataclass
class TrainHistory:
    seed: int
    config: dict
    epochs: List[EpochRecord] = field(default_factory=list)
    best_epoch: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "config": self.config,
            "best_epoch": self.best_epoch,
            "epochs": [e.to_dict() for e in self.epochs],
        }


def chronological_split(dataset: Sequence[MultimodalSample],
                        ratios: Tuple[float, float, float] = (0.70, 0.15, 0.15)):
    """Sort by timestamp, then take contiguous prefixes: train gets
    floor(r_train * n), validation the next floor(r_val * n), test the rest."""
    n = len(dataset)
    if n < 3:
        raise InputError(f"need at least 3 samples to split, got {n}")
    ordered = sorted(dataset, key=lambda s: s.timestamp)
    n_train = int(np.floor(ratios[0] * n))
    n_val = int(np.floor(ratios[1] * n))
    return (ordered[:n_train], ordered[n_train:n_train + n_val],
            ordered[n_train + n_val:])


def predict(checkpoint: Checkpoint, samples: Sequence[MultimodalSample]) -> np.ndarray:
    """Argmax class per sample; dropout off, fixed evaluation batching."""
    model = FusionModel(checkpoint.config, checkpoint.params)
    preds = []
    with T.no_grad():
        for lo in range(0, len(samples), EVAL_BATCH):
            chunk = list(samples[lo:lo + EVAL_BATCH])
            logits = model.forward_batch(collate(chunk), train=False)
            preds.append(np.argmax(logits.data, axis=-1))
    return np.concatenate(preds)


def evaluate(checkpoint: Checkpoint, samples: Sequence[MultimodalSample]) -> MetricsReport:
    if len(samples) == 0:
        raise InputError("cannot evaluate on an empty sample list")
    preds = predict(checkpoint, samples)
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return metrics_from_predictions(labels, preds)


def train(config: ModelConfig, dataset: Sequence[MultimodalSample], epochs: int,
          batch_size: int = 64, lr: float = 1e-3, weight_decay: float = 0.01,
          clip_norm: float = 1.0,
          verbose: bool = False) -> Tuple[Checkpoint, TrainHistory]:
    """Mini-batch training with per-epoch validation; returns the parameters
    from the best-validation-accuracy epoch (ties to the earliest)."""
    train_set, val_set, test_set = chronological_split(dataset)
    if not train_set or not val_set or not test_set:
        raise InputError("dataset too small: a split partition is empty")

    model = FusionModel(config)
    history = TrainHistory(seed=config.seed, config=config.to_dict())
    if epochs == 0:
        return Checkpoint(config=config, params=model.params), history

    opt = AdamW(model.params, lr=lr, weight_decay=weight_decay)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 7]))
    best_acc = -1.0
    best_params = None
    n = len(train_set)
    for epoch in range(epochs):
        perm = rng.permutation(n)
        losses = []
        for bi, lo in enumerate(range(0, n, batch_size)):
            batch = [train_set[i] for i in perm[lo:lo + batch_size]]
            logits = model.forward_batch(collate(batch), train=True, rng=rng)
            loss = cross_entropy_batch(logits, [s.label for s in batch])
            lval = loss.item()
            if not np.isfinite(lval):
                raise TrainingDiverged(epoch=epoch, batch=bi, loss=lval)
            opt.zero_grad()
            loss.backward()
            clip_grad_norm(model.params, clip_norm)
            opt.step()
            losses.append(lval)
        ckpt = Checkpoint(config=config, params=model.params)
        val_metrics = evaluate(ckpt, val_set)
        history.epochs.append(EpochRecord(epoch=epoch,
                                          train_loss=float(np.mean(losses)),
                                          val=val_metrics.to_dict()))
        if val_metrics.accuracy > best_acc:
            best_acc = val_metrics.accuracy
            best_params = _copy_params(model.params)
            history.best_epoch = epoch
        if verbose:
            print(f"epoch {epoch}: loss {np.mean(losses):.4f} "
                  f"val_acc {val_metrics.accuracy:.4f}")
    return Checkpoint(config=config, params=best_params), history


def _copy_params(params: ParamStore) -> ParamStore:
    out = ParamStore()
    for name, t in params.items():
        out.add(name, t.data.copy())
    return out
