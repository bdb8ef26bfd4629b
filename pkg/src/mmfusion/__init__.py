"""Multimodal misinformation detection: five modality encoders, three-stage
cross-attention fusion, and a training/experiment harness, built on a small
reverse-mode autodiff tensor core."""

__version__ = "0.1.0"

from .config import ModelConfig, minimal_config
from .data import CorpusSpec, MultimodalSample, generate_corpus, inject_misalignment
from .estimator import MisinformationDetector
from .fusion import FusionModel
from .gradcheck import GradReport, grad_check
from .metrics import MetricsReport, metrics_from_predictions
from .tensor import Tensor
from .train import Checkpoint, TrainHistory, chronological_split, evaluate, train

__all__ = [
    "__version__",
    "ModelConfig",
    "minimal_config",
    "CorpusSpec",
    "MultimodalSample",
    "generate_corpus",
    "inject_misalignment",
    "MisinformationDetector",
    "FusionModel",
    "GradReport",
    "grad_check",
    "MetricsReport",
    "metrics_from_predictions",
    "Tensor",
    "Checkpoint",
    "TrainHistory",
    "chronological_split",
    "evaluate",
    "train",
]
