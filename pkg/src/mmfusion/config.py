"""Model configuration: architecture and training hyperparameters."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import List, Tuple

MODALITIES = ("audio", "text", "video", "social")
AUDIO_ENCODERS = ("vgg", "w2v", "none")


@dataclass
class ModelConfig:
    # core dimensions
    d_model: int = 64
    n_heads: int = 4
    ff_mult: int = 2  # feed-forward hidden = ff_mult * d_model
    dropout: float = 0.2
    # probability of replacing an input token with PAD during training; keeps
    # the model from memorizing per-sample token sequences instead of
    # learning the cross-modal signal
    token_dropout: float = 0.15
    seed: int = 0

    # depths
    encoder_depth: int = 2   # transformer blocks in text/social/w2v encoders
    fusion_depth: int = 1    # cross-attention blocks per fusion stage

    # modality gating
    enabled_modalities: Tuple[str, ...] = ("audio", "text", "video", "social")
    audio_encoder: str = "vgg"

    # text / social
    vocab_size: int = 256
    max_text_len: int = 32

    # audio front ends
    sample_rate: int = 8000
    stft_window: int = 64
    stft_hop: int = 32
    n_mels: int = 16
    vgg_channels: Tuple[int, ...] = (8,)   # one conv-conv-pool block per entry
    vgg_kernel: int = 3
    # (width, stride) per strided conv layer of the waveform front end; the
    # wide first layer sees a full period of the lowest topic tone
    w2v_schedule: Tuple[Tuple[int, int], ...] = ((16, 8), (8, 4), (4, 2))

    # video
    frame_size: Tuple[int, int, int] = (8, 8, 1)  # H, W, channels
    frame_channels: Tuple[int, ...] = (4,)
    frame_kernel: int = 3
    clip_len: int = 4

    # classifier head
    classifier_hidden: int = 32

    # alternate reading of the cross-attention role assignment: when True the
    # arrow source supplies queries and the target supplies keys/values
    swap_attention_roles: bool = False

    def __post_init__(self):
        self.enabled_modalities = tuple(sorted(set(self.enabled_modalities)))
        self.validate()

    def validate(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})")
        unknown = set(self.enabled_modalities) - set(MODALITIES)
        if unknown:
            raise ValueError(f"unknown modalities: {sorted(unknown)}")
        if not self.enabled_modalities:
            raise ValueError("at least one modality must be enabled")
        if self.audio_encoder not in AUDIO_ENCODERS:
            raise ValueError(f"audio_encoder must be one of {AUDIO_ENCODERS}")
        if ("audio" in self.enabled_modalities) != (self.audio_encoder != "none"):
            raise ValueError(
                "audio enabled requires audio_encoder in {vgg, w2v}; "
                "audio disabled requires audio_encoder == 'none'")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if not 0.0 <= self.token_dropout < 1.0:
            raise ValueError(
                f"token_dropout must be in [0, 1), got {self.token_dropout}")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads

    def enabled(self, modality: str) -> bool:
        return modality in self.enabled_modalities

    def min_waveform_len(self) -> int:
        """Shortest waveform the configured audio front end accepts."""
        if self.audio_encoder == "w2v":
            # invert L' = (L - w) / s + 1 layer by layer with L' = 1
            n = 1
            for w, s in reversed(self.w2v_schedule):
                n = (n - 1) * s + w
            return n
        return self.stft_window

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["enabled_modalities"] = list(self.enabled_modalities)
        d["w2v_schedule"] = [list(p) for p in self.w2v_schedule]
        d["vgg_channels"] = list(self.vgg_channels)
        d["frame_channels"] = list(self.frame_channels)
        d["frame_size"] = list(self.frame_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["enabled_modalities"] = tuple(d["enabled_modalities"])
        d["w2v_schedule"] = tuple(tuple(p) for p in d["w2v_schedule"])
        d["vgg_channels"] = tuple(d["vgg_channels"])
        d["frame_channels"] = tuple(d["frame_channels"])
        d["frame_size"] = tuple(d["frame_size"])
        return cls(**d)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]


def minimal_config(**overrides) -> ModelConfig:
    """Smallest full-modality configuration; used by the gradient-check
    command and fast tests."""
    base = dict(
        d_model=8,
        n_heads=1,
        ff_mult=1,
        dropout=0.0,
        token_dropout=0.0,
        encoder_depth=1,
        fusion_depth=1,
        vocab_size=8,
        max_text_len=4,
        stft_window=16,
        stft_hop=8,
        n_mels=8,
        vgg_channels=(2,),
        vgg_kernel=2,
        w2v_schedule=((4, 2),),
        frame_size=(4, 4, 1),
        frame_channels=(2,),
        frame_kernel=2,
        clip_len=2,
        classifier_hidden=8,
    )
    base.update(overrides)
    return ModelConfig(**base)
