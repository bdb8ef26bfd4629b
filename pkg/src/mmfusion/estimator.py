"""Scikit-learn style estimator wrapping the fusion model and training loop.

``MisinformationDetector`` exposes fit/predict/predict_proba/score and the
standard get_params/set_params surface, so the detector composes with
sklearn model selection and pipelines operating on lists of
``MultimodalSample`` objects.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from . import tensor as T
from .config import ModelConfig
from .data import MultimodalSample, collate
from .errors import InputError
from .fusion import FusionModel
from .train import Checkpoint, evaluate, predict, train

_SAMPLE_FIELDS = ("text_tokens", "waveform", "frames", "user_tokens", "comment_tokens")


def check_samples(X) -> list:
    """Validate that X is a non-empty sequence of multimodal samples."""
    if X is None or len(X) == 0:
        raise InputError("X must be a non-empty sequence of MultimodalSample")
    for i, s in enumerate(X):
        missing = [f for f in _SAMPLE_FIELDS if not hasattr(s, f)]
        if missing:
            raise InputError(f"sample {i} lacks modality fields: {missing}")
    return list(X)


class MisinformationDetector(BaseEstimator, ClassifierMixin):
    """Binary real/fake classifier over multimodal samples.

    Parameters mirror the model/training configuration; ``fit`` performs the
    chronological 70:15:15 split internally and keeps the parameters from the
    best-validation-accuracy epoch.
    """

    def __init__(self, d_model: int = 64, n_heads: int = 4,
                 encoder_depth: int = 2, fusion_depth: int = 1,
                 audio_encoder: str = "vgg",
                 enabled_modalities: tuple = ("audio", "text", "video", "social"),
                 dropout: float = 0.2, token_dropout: float = 0.15,
                 epochs: int = 20, batch_size: int = 64,
                 lr: float = 1e-3, weight_decay: float = 0.01, seed: int = 0):
        self.d_model = d_model
        self.n_heads = n_heads
        self.encoder_depth = encoder_depth
        self.fusion_depth = fusion_depth
        self.audio_encoder = audio_encoder
        self.enabled_modalities = enabled_modalities
        self.dropout = dropout
        self.token_dropout = token_dropout
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.seed = seed

    def _build_config(self) -> ModelConfig:
        return ModelConfig(
            d_model=self.d_model,
            n_heads=self.n_heads,
            encoder_depth=self.encoder_depth,
            fusion_depth=self.fusion_depth,
            audio_encoder=self.audio_encoder,
            enabled_modalities=tuple(self.enabled_modalities),
            dropout=self.dropout,
            token_dropout=self.token_dropout,
            seed=self.seed,
        )

    def fit(self, X: Sequence[MultimodalSample], y=None) -> "MisinformationDetector":
        samples = check_samples(X)
        if y is not None:
            import dataclasses
            y = np.asarray(y, dtype=np.int64)
            if len(y) != len(samples):
                raise InputError(f"y has {len(y)} labels for {len(samples)} samples")
            samples = [dataclasses.replace(s, label=int(lab))
                       for s, lab in zip(samples, y)]
        ckpt, history = train(self._build_config(), samples, epochs=self.epochs,
                              batch_size=self.batch_size, lr=self.lr,
                              weight_decay=self.weight_decay)
        self.checkpoint_ = ckpt
        self.history_ = history
        self.classes_ = np.array([0, 1])
        return self

    def _check_fitted(self):
        if not hasattr(self, "checkpoint_"):
            raise NotFittedError("call fit before predict")

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        return predict(self.checkpoint_, check_samples(X))

    def predict_proba(self, X) -> np.ndarray:
        self._check_fitted()
        samples = check_samples(X)
        model = FusionModel(self.checkpoint_.config, self.checkpoint_.params)
        probs = []
        with T.no_grad():
            for lo in range(0, len(samples), 64):
                logits = model.forward_batch(collate(samples[lo:lo + 64]),
                                             train=False)
                z = logits.data - logits.data.max(axis=-1, keepdims=True)
                e = np.exp(z)
                probs.append(e / e.sum(axis=-1, keepdims=True))
        return np.concatenate(probs)

    def evaluate(self, X) -> dict:
        """Full metrics report on labeled samples."""
        self._check_fitted()
        return evaluate(self.checkpoint_, check_samples(X)).to_dict()
