"""Three-stage cross-attention fusion network and binary classifier.

Pipeline: modality encoders -> text/audio cross attention -> (audio-enhanced
text)/frames cross attention -> per-modality mean pooling -> self attention
over the six-slot feature sequence [x_t, x_a, x_f, x_c, x_u, x_m] -> final
transformer block -> two-logit classifier (0 = real, 1 = fake).

Disabled modalities are replaced by learned placeholder vectors in the
six-slot sequence; their encoders are never constructed or evaluated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import encoders as enc
from . import tensor as T
from .config import ModelConfig
from .errors import InputError
from .layers import (ParamStore, add_positional, init_attention_block, linear,
                     transformer_block)
from .tensor import Tensor

SLOTS = ("text", "audio", "frame", "clip", "user", "comment")


@dataclass
class FusedFeatures:
    """The six pooled feature vectors entering aggregation."""
    x_t: Tensor
    x_a: Tensor
    x_f: Tensor
    x_c: Tensor
    x_u: Tensor
    x_m: Tensor

    def as_list(self) -> List[Tensor]:
        return [self.x_t, self.x_a, self.x_f, self.x_c, self.x_u, self.x_m]


def cross_attention(f_q: enc.FeatureSequence, f_kv: enc.FeatureSequence,
                    params: ParamStore, prefix: str, cfg: ModelConfig,
                    train: bool = False, rng=None) -> enc.FeatureSequence:
    """Transformer block(s) with queries from f_q and keys/values from f_kv;
    output keeps f_q's length and d_model."""
    x = f_q.features
    for i in range(cfg.fusion_depth):
        x = transformer_block(x, f_kv.features, params, f"{prefix}.blk{i}",
                              cfg.n_heads, cfg.dropout, train, rng)
    return enc.FeatureSequence(f_q.modality, x)


def fuse_stage1(f_t, f_a, params, cfg, train=False, rng=None):
    """Text/audio cross fusion. Default reading: the arrow target supplies
    queries; with ``swap_attention_roles`` the source does."""
    if cfg.swap_attention_roles:
        f_t_a = cross_attention(f_a, f_t, params, "stage1.ta", cfg, train, rng)
        f_a_t = cross_attention(f_t, f_a, params, "stage1.at", cfg, train, rng)
    else:
        f_t_a = cross_attention(f_t, f_a, params, "stage1.ta", cfg, train, rng)
        f_a_t = cross_attention(f_a, f_t, params, "stage1.at", cfg, train, rng)
    return f_t_a, f_a_t


def fuse_stage2(f_t_a, f_f, params, cfg, train=False, rng=None):
    if cfg.swap_attention_roles:
        f_t_af = cross_attention(f_f, f_t_a, params, "stage2.tf", cfg, train, rng)
        f_f_t = cross_attention(f_t_a, f_f, params, "stage2.ft", cfg, train, rng)
    else:
        f_t_af = cross_attention(f_t_a, f_f, params, "stage2.tf", cfg, train, rng)
        f_f_t = cross_attention(f_f, f_t_a, params, "stage2.ft", cfg, train, rng)
    return f_t_af, f_f_t


def pool_mean(f: enc.FeatureSequence) -> Tensor:
    """Arithmetic mean over the length axis: [..., L, d] -> [..., d]."""
    mean = T.tmean(f.features, axis=-2, keepdims=False)
    return mean


def _stack_vectors(vectors: List[Tensor]) -> Tensor:
    rows = []
    for v in vectors:
        rows.append(T.reshape(v, v.shape[:-1] + (1, v.shape[-1])))
    return T.concat(rows, axis=-2)


def _unstack_rows(x: Tensor) -> List[Tensor]:
    out = []
    for i in range(x.shape[-2]):
        row = T.slice_axis(x, x.ndim - 2, i, i + 1)
        out.append(T.reshape(row, row.shape[:-2] + (row.shape[-1],)))
    return out


def social_self_attention(content: List[Tensor], social: List[Tensor],
                          params: ParamStore, cfg: ModelConfig,
                          train: bool = False, rng=None) -> List[Tensor]:
    """One self-attention transformer block over the stacked six-slot
    sequence; order preserved, no positional encodings."""
    vectors = list(content) + list(social)
    if len(vectors) != 6:
        raise InputError(f"expected exactly 6 pooled feature vectors, got {len(vectors)}")
    seq = _stack_vectors(vectors)
    out = transformer_block(seq, seq, params, "social.blk0", cfg.n_heads,
                            cfg.dropout, train, rng)
    return _unstack_rows(out)


def aggregate_classify(fused: FusedFeatures, params: ParamStore, cfg: ModelConfig,
                       train: bool = False, rng=None) -> Tensor:
    """Final transformer block over the six-slot sequence, mean pool, then
    a two-layer head producing 2 logits."""
    seq = _stack_vectors(fused.as_list())
    out = transformer_block(seq, seq, params, "agg.blk0", cfg.n_heads,
                            cfg.dropout, train, rng)
    pooled = T.tmean(out, axis=-2)
    h = T.relu(linear(pooled, params["cls.W1"], params["cls.b1"]))
    return linear(h, params["cls.W2"], params["cls.b2"])


class FusionModel:
    """Owns the config, the named parameters, and per-encoder call counters."""

    def __init__(self, config: ModelConfig, params: Optional[ParamStore] = None):
        self.config = config
        self.params = params if params is not None else self._init_params()
        self.encoder_calls = {m: 0 for m in ("text", "audio", "video", "social")}

    def _init_params(self) -> ParamStore:
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        params = ParamStore()
        d, ff = cfg.d_model, cfg.ff_mult * cfg.d_model
        if cfg.enabled("text"):
            enc.init_token_encoder(params, "text", cfg, rng)
        if cfg.enabled("audio"):
            if cfg.audio_encoder == "vgg":
                enc.init_vgg_encoder(params, cfg, rng)
            else:
                enc.init_w2v_encoder(params, cfg, rng)
        if cfg.enabled("video"):
            enc.init_frame_encoder(params, cfg, rng)
            enc.init_clip_encoder(params, cfg, rng)
        if cfg.enabled("social"):
            enc.init_token_encoder(params, "user", cfg, rng)
            enc.init_token_encoder(params, "comment", cfg, rng)
        if cfg.enabled("text") and cfg.enabled("audio"):
            for i in range(cfg.fusion_depth):
                init_attention_block(params, f"stage1.ta.blk{i}", d, ff, rng)
                init_attention_block(params, f"stage1.at.blk{i}", d, ff, rng)
        if cfg.enabled("text") and cfg.enabled("video"):
            for i in range(cfg.fusion_depth):
                init_attention_block(params, f"stage2.tf.blk{i}", d, ff, rng)
                init_attention_block(params, f"stage2.ft.blk{i}", d, ff, rng)
        init_attention_block(params, "social.blk0", d, ff, rng)
        init_attention_block(params, "agg.blk0", d, ff, rng)
        params.add_normal("cls.W1", (d, cfg.classifier_hidden), rng)
        params.add("cls.b1", np.zeros(cfg.classifier_hidden))
        params.add_normal("cls.W2", (cfg.classifier_hidden, 2), rng)
        params.add("cls.b2", np.zeros(2))
        # learned stand-ins for pooled features of disabled modalities
        for slot, modality in (("text", "text"), ("audio", "audio"),
                               ("frame", "video"), ("clip", "video"),
                               ("user", "social"), ("comment", "social")):
            if not cfg.enabled(modality):
                params.add_normal(f"placeholder.{slot}", (d,), rng, fan_in=d)
        return params

    def _placeholder(self, slot: str, lead: tuple) -> Tensor:
        p = self.params[f"placeholder.{slot}"]
        if not lead:
            return p
        base = Tensor(np.zeros(lead + p.shape))
        return T.add(base, p)

    def forward_batch(self, batch: dict, train: bool = False, rng=None) -> Tensor:
        """Run the full pipeline on a collated batch dict; logits [B, 2]."""
        cfg = self.config
        p = self.params

        def need(key, modality):
            if key not in batch or batch[key] is None:
                raise InputError(f"enabled modality missing from sample: {modality}")
            return batch[key]

        f_t = f_a = f_f = f_c = None
        f_u = f_m = None
        if cfg.enabled("text"):
            self.encoder_calls["text"] += 1
            f_t = enc.encode_text(need("text_tokens", "text"), p, cfg, train, rng)
        if cfg.enabled("audio"):
            self.encoder_calls["audio"] += 1
            wav = need("waveform", "audio")
            if cfg.audio_encoder == "vgg":
                mel = enc.mel_spectrogram(wav, cfg.sample_rate, cfg.stft_window,
                                          cfg.stft_hop, cfg.n_mels)
                f_a = enc.encode_audio_vgg(mel, p, cfg, train, rng)
            else:
                f_a = enc.encode_audio_w2v(wav, p, cfg, train, rng)
            # positional encodings at the fusion input let cross-attention key
            # on temporal placement; the waveform encoder's internal self-
            # attention mixes content across positions, so even that path
            # needs a fresh positional signal here
            f_a = enc.FeatureSequence("audio", add_positional(f_a.features))
        if cfg.enabled("video"):
            self.encoder_calls["video"] += 1
            frames = need("frames", "video")
            f_f = enc.encode_frames(frames, p, cfg, train, rng)
            f_f = enc.FeatureSequence("frame", add_positional(f_f.features))
            f_c = enc.encode_clips(frames, p, cfg, train, rng)
        if cfg.enabled("social"):
            self.encoder_calls["social"] += 1
            f_u, f_m = enc.encode_social(need("user_tokens", "social"),
                                         need("comment_tokens", "social"),
                                         p, cfg, train, rng)

        # stage 1: text <-> audio (skipped unless both present)
        if f_t is not None and f_a is not None:
            f_t_a, f_a_t = fuse_stage1(f_t, f_a, p, cfg, train, rng)
        else:
            f_t_a, f_a_t = f_t, f_a
        # stage 2: (audio-enhanced text) <-> frames
        if f_t_a is not None and f_f is not None:
            f_t_af, f_f_t = fuse_stage2(f_t_a, f_f, p, cfg, train, rng)
        else:
            f_t_af, f_f_t = f_t_a, f_f

        lead = self._lead_shape(batch)
        fused = FusedFeatures(
            x_t=pool_mean(f_t_af) if f_t_af is not None else self._placeholder("text", lead),
            x_a=pool_mean(f_a_t) if f_a_t is not None else self._placeholder("audio", lead),
            x_f=pool_mean(f_f_t) if f_f_t is not None else self._placeholder("frame", lead),
            x_c=pool_mean(f_c) if f_c is not None else self._placeholder("clip", lead),
            x_u=pool_mean(f_u) if f_u is not None else self._placeholder("user", lead),
            x_m=pool_mean(f_m) if f_m is not None else self._placeholder("comment", lead),
        )
        enhanced = social_self_attention(fused.as_list()[:4], fused.as_list()[4:],
                                         p, cfg, train, rng)
        fused = FusedFeatures(*enhanced)
        return aggregate_classify(fused, p, cfg, train, rng)

    def _lead_shape(self, batch: dict) -> tuple:
        for key in ("text_tokens", "waveform", "user_tokens", "comment_tokens"):
            v = batch.get(key)
            if v is not None:
                a = np.asarray(v)
                return a.shape[:-1]
        v = batch.get("frames")
        if v is not None:
            return np.asarray(v).shape[:-4]
        raise InputError("batch provides no modality payloads")

    def forward(self, sample, train: bool = False, rng=None) -> Tensor:
        """Logits [2] for a single sample (any object with the modality
        payload attributes); runs as a batch of one."""
        batch = {}
        for key in ("text_tokens", "waveform", "frames", "user_tokens",
                    "comment_tokens"):
            v = getattr(sample, key, None)
            batch[key] = None if v is None else np.asarray(v)[None, ...]
        logits = self.forward_batch(batch, train, rng)
        return T.reshape(logits, (2,))


# ---------------------------------------------------------------------------
# checkpoint io


CHECKPOINT_MAGIC = b"MMFCKPT1"


def save_checkpoint(path, config: ModelConfig, params: ParamStore) -> None:
    """Binary container: magic, JSON header (config + ordered names/shapes),
    then raw little-endian float64 payloads in header order."""
    names = [name for name, _ in params.named()]
    header = {
        "format": "mmfusion-checkpoint",
        "version": 1,
        "config": config.to_dict(),
        "params": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }
    hjson = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(len(hjson).to_bytes(8, "little"))
        fh.write(hjson)
        for n in names:
            fh.write(np.ascontiguousarray(params[n].data, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Inverse of save_checkpoint; returns (ModelConfig, ParamStore)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise InputError(f"not a checkpoint file: bad magic {magic!r}")
        hlen = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(hlen))
        config = ModelConfig.from_dict(header["config"])
        params = ParamStore()
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            n_bytes = int(np.prod(shape)) * 8
            buf = fh.read(n_bytes)
            if len(buf) != n_bytes:
                raise InputError(f"checkpoint truncated at parameter {entry['name']}")
            params.add(entry["name"],
                       np.frombuffer(buf, dtype="<f8").reshape(shape).copy())
    return config, params
