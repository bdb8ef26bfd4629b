"""Per-modality feature extractors.

Text and social context use token embeddings plus transformer blocks. Audio
has two interchangeable encoders: a log-mel spectrogram followed by a
conv/pool stack ("vgg"), and a strided waveform conv front end followed by a
transformer ("w2v"). Video is encoded twice: per-frame conv features and a
clip-level temporal-conv summary.

All encoders accept a single sample or a batch (extra leading axis) and
always produce features whose last dimension is ``config.d_model``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .errors import InputError
from .layers import ParamStore, add_positional, linear, transformer_block
from .tensor import Tensor

PAD_TOKEN = 0
LOG_FLOOR_EPS = 1e-10
LOG_FLOOR = math.log(LOG_FLOOR_EPS)


@dataclass
class FeatureSequence:
    """Length-L sequence of d_model-dim features for one modality."""
    modality: str
    features: Tensor

    @property
    def length(self) -> int:
        return self.features.shape[-2]


@dataclass
class MelFrames:
    frames: Tensor  # [..., T, n_mels] log-mel energies
    frame_rate: float


# ---------------------------------------------------------------------------
# mel spectrogram


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (np.power(10.0, np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, window: int, sample_rate: int) -> np.ndarray:
    """Triangular HTK-mel filters, [n_mels, window // 2 + 1]."""
    n_bins = window // 2 + 1
    mel_pts = np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    bin_freqs = np.arange(n_bins) * sample_rate / window
    fb = np.zeros((n_mels, n_bins))
    for j in range(n_mels):
        lo, ctr, hi = hz_pts[j], hz_pts[j + 1], hz_pts[j + 2]
        up = (bin_freqs - lo) / max(ctr - lo, 1e-12)
        down = (hi - bin_freqs) / max(hi - ctr, 1e-12)
        fb[j] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


def mel_band_centers(n_mels: int, sample_rate: int) -> np.ndarray:
    """Center frequency (Hz) of each mel band."""
    mel_pts = np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2)
    return mel_to_hz(mel_pts[1:-1])


def mel_spectrogram(waveform, sample_rate: int, window: int, hop: int,
                    n_mels: int) -> MelFrames:
    """Hann-windowed magnitude STFT -> mel filterbank -> log with floor.

    ``waveform`` is [n] or [batch, n]; frames come out [..., T, n_mels] with
    T = floor((n - window) / hop) + 1.
    """
    wav = np.asarray(waveform, dtype=np.float64)
    n = wav.shape[-1]
    if n < window:
        raise InputError(f"waveform length {n} shorter than one STFT window ({window})")
    frames = np.lib.stride_tricks.sliding_window_view(wav, window, axis=-1)[..., ::hop, :]
    hann = np.hanning(window)
    mag = np.abs(np.fft.rfft(frames * hann, axis=-1))
    fb = mel_filterbank(n_mels, window, sample_rate)
    energy = mag @ fb.T
    logmel = np.log(np.maximum(energy, LOG_FLOOR_EPS))
    return MelFrames(frames=Tensor(logmel), frame_rate=sample_rate / hop)


# ---------------------------------------------------------------------------
# parameter construction


def init_token_encoder(params: ParamStore, prefix: str, cfg: ModelConfig, rng) -> None:
    params.add_normal(f"{prefix}.embed", (cfg.vocab_size, cfg.d_model), rng,
                      fan_in=cfg.d_model)
    for i in range(cfg.encoder_depth):
        _init_block(params, f"{prefix}.blk{i}", cfg, rng)


def _init_block(params, prefix, cfg, rng):
    from .layers import init_attention_block
    init_attention_block(params, prefix, cfg.d_model, cfg.ff_mult * cfg.d_model, rng)


def vgg_plane_after_blocks(t: int, m: int, cfg: ModelConfig):
    """Time/mel extents after each conv-conv-pool block; raises with the
    offending block index if the plane collapses."""
    k = cfg.vgg_kernel
    for bi, _ in enumerate(cfg.vgg_channels):
        t, m = t - (k - 1), m - (k - 1)
        t, m = t - (k - 1), m - (k - 1)
        if t < 2 or m < 2:
            raise T.ShapeError(f"mel input too short for vgg block {bi}: plane {t}x{m}")
        t, m = t // 2, m // 2
    return t, m


def init_vgg_encoder(params: ParamStore, cfg: ModelConfig, rng) -> None:
    k = cfg.vgg_kernel
    c_prev = 1
    for bi, c in enumerate(cfg.vgg_channels):
        params.add_normal(f"vgg.b{bi}.conv1", (c, c_prev, k, k), rng, fan_in=c_prev * k * k)
        params.add_normal(f"vgg.b{bi}.conv2", (c, c, k, k), rng, fan_in=c * k * k)
        c_prev = c
    # projection input dim depends only on the mel axis
    _, m_out = vgg_plane_after_blocks(10 ** 6, cfg.n_mels, cfg)
    flat = m_out * cfg.vgg_channels[-1]
    params.add_normal("vgg.proj_W", (flat, cfg.d_model), rng)
    params.add("vgg.proj_b", np.zeros(cfg.d_model))
    params.add("vgg.ln_g", np.ones(cfg.d_model))
    params.add("vgg.ln_b", np.zeros(cfg.d_model))


def init_w2v_encoder(params: ParamStore, cfg: ModelConfig, rng) -> None:
    c_prev = 1
    for i, (w, _s) in enumerate(cfg.w2v_schedule):
        params.add_normal(f"w2v.conv{i}", (cfg.d_model, c_prev, w), rng, fan_in=c_prev * w)
        c_prev = cfg.d_model
    params.add("w2v.ln_g", np.ones(cfg.d_model))
    params.add("w2v.ln_b", np.zeros(cfg.d_model))
    for i in range(cfg.encoder_depth):
        _init_block(params, f"w2v.blk{i}", cfg, rng)


def frame_plane_after_blocks(h: int, w: int, kernel: int, channels):
    for bi, _ in enumerate(channels):
        h, w = h - (kernel - 1), w - (kernel - 1)
        h, w = h - (kernel - 1), w - (kernel - 1)
        if h < 2 or w < 2:
            raise T.ShapeError(f"frame too small for conv block {bi}: plane {h}x{w}")
        h, w = h // 2, w // 2
    return h, w


def _init_frame_stack(params: ParamStore, prefix: str, cfg: ModelConfig, rng) -> int:
    k = cfg.frame_kernel
    c_prev = cfg.frame_size[2]
    for bi, c in enumerate(cfg.frame_channels):
        params.add_normal(f"{prefix}.b{bi}.conv1", (c, c_prev, k, k), rng, fan_in=c_prev * k * k)
        params.add_normal(f"{prefix}.b{bi}.conv2", (c, c, k, k), rng, fan_in=c * k * k)
        c_prev = c
    h, w = frame_plane_after_blocks(cfg.frame_size[0], cfg.frame_size[1], k,
                                    cfg.frame_channels)
    return h * w * cfg.frame_channels[-1]


def init_frame_encoder(params: ParamStore, cfg: ModelConfig, rng) -> None:
    flat = _init_frame_stack(params, "frame", cfg, rng)
    params.add_normal("frame.proj_W", (flat, cfg.d_model), rng)
    params.add("frame.proj_b", np.zeros(cfg.d_model))
    params.add("frame.ln_g", np.ones(cfg.d_model))
    params.add("frame.ln_b", np.zeros(cfg.d_model))


def init_clip_encoder(params: ParamStore, cfg: ModelConfig, rng) -> None:
    flat = _init_frame_stack(params, "clip", cfg, rng)
    params.add_normal("clip.proj_W", (flat, cfg.d_model), rng)
    params.add("clip.proj_b", np.zeros(cfg.d_model))
    params.add("clip.ln_g", np.ones(cfg.d_model))
    params.add("clip.ln_b", np.zeros(cfg.d_model))
    params.add_normal("clip.tconv", (cfg.d_model, cfg.d_model, cfg.clip_len), rng,
                      fan_in=cfg.d_model * cfg.clip_len)


# ---------------------------------------------------------------------------
# encoders


def _validate_tokens(tokens, cfg: ModelConfig, what: str) -> np.ndarray:
    ids = np.asarray(tokens)
    if ids.size == 0 or ids.shape[-1] == 0:
        raise InputError(f"{what} token sequence is empty")
    if ids.shape[-1] > cfg.max_text_len:
        raise InputError(
            f"{what} length {ids.shape[-1]} exceeds max_text_len {cfg.max_text_len}")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise InputError(
            f"{what} token id out of vocabulary [0, {cfg.vocab_size})")
    return ids.astype(np.int64)


def encode_tokens(tokens, params: ParamStore, prefix: str, modality: str,
                  cfg: ModelConfig, train: bool = False, rng=None) -> FeatureSequence:
    ids = _validate_tokens(tokens, cfg, modality)
    if train and cfg.token_dropout > 0.0 and rng is not None:
        # mask tokens to PAD so per-sample token sequences cannot be
        # memorized as label fingerprints
        keep = rng.random(ids.shape) >= cfg.token_dropout
        ids = np.where(keep, ids, PAD_TOKEN)
    # scale embeddings to unit variance so content is not drowned by the
    # unit-amplitude positional encodings
    x = T.scale(T.embedding(params[f"{prefix}.embed"], ids), math.sqrt(cfg.d_model))
    x = add_positional(x)
    for i in range(cfg.encoder_depth):
        x = transformer_block(x, x, params, f"{prefix}.blk{i}", cfg.n_heads,
                              cfg.dropout, train, rng)
    return FeatureSequence(modality, x)


def encode_text(tokens, params, cfg, train=False, rng=None) -> FeatureSequence:
    return encode_tokens(tokens, params, "text", "text", cfg, train, rng)


def encode_social(user_tokens, comment_tokens, params, cfg,
                  train=False, rng=None):
    """Two token encoders with independent weights. Empty streams map to a
    single reserved PAD token so downstream shapes stay fixed."""
    user_tokens = _pad_if_empty(user_tokens)
    comment_tokens = _pad_if_empty(comment_tokens)
    fu = encode_tokens(user_tokens, params, "user", "user", cfg, train, rng)
    fm = encode_tokens(comment_tokens, params, "comment", "comment", cfg, train, rng)
    return fu, fm


def _pad_if_empty(tokens):
    ids = np.asarray(tokens)
    if ids.size == 0 or (ids.ndim and ids.shape[-1] == 0):
        shape = ids.shape[:-1] + (1,) if ids.ndim else (1,)
        return np.full(shape, PAD_TOKEN, dtype=np.int64)
    return tokens


def _conv_pool_stack(x: Tensor, params: ParamStore, prefix: str, n_blocks: int) -> Tensor:
    for bi in range(n_blocks):
        try:
            x = T.relu(T.conv2d(x, params[f"{prefix}.b{bi}.conv1"]))
            x = T.relu(T.conv2d(x, params[f"{prefix}.b{bi}.conv2"]))
            x = T.pool(x, "max", (2, 2))
        except T.ShapeError as e:
            raise T.ShapeError(f"input too short for conv block {bi}: {e}") from e
    return x


def encode_audio_vgg(mel: MelFrames, params, cfg: ModelConfig,
                     train=False, rng=None) -> FeatureSequence:
    x = mel.frames if isinstance(mel, MelFrames) else mel
    if x.shape[-1] != cfg.n_mels:
        raise T.ShapeError(f"mel frames have {x.shape[-1]} bands, config expects {cfg.n_mels}")
    # fixed affine rescale: log floor maps to 0 so silence is neutral input
    x = T.scale(T.sub(x, Tensor(np.full(x.shape, LOG_FLOOR))), 1.0 / -LOG_FLOOR)
    x = T.reshape(x, x.shape + (1,))  # [..., T, M, 1]
    x = _conv_pool_stack(x, params, "vgg", len(cfg.vgg_channels))
    *lead, t, m, c = x.shape
    x = T.reshape(x, tuple(lead) + (t, m * c))
    x = linear(x, params["vgg.proj_W"], params["vgg.proj_b"])
    x = T.layer_norm(x, params["vgg.ln_g"], params["vgg.ln_b"])
    return FeatureSequence("audio", x)


def encode_audio_w2v(waveform, params, cfg: ModelConfig,
                     train=False, rng=None) -> FeatureSequence:
    wav = np.asarray(waveform, dtype=np.float64)
    need = cfg.min_waveform_len()
    if wav.shape[-1] < need:
        raise InputError(
            f"waveform length {wav.shape[-1]} below the conv stack minimum {need}")
    x = Tensor(wav[..., None])  # [..., L, 1]
    for i, (_w, s) in enumerate(cfg.w2v_schedule):
        x = T.gelu(T.conv1d(x, params[f"w2v.conv{i}"], stride=s))
    x = T.layer_norm(x, params["w2v.ln_g"], params["w2v.ln_b"])
    x = add_positional(x)
    for i in range(cfg.encoder_depth):
        x = transformer_block(x, x, params, f"w2v.blk{i}", cfg.n_heads,
                              cfg.dropout, train, rng)
    return FeatureSequence("audio", x)


def _encode_frame_stack(frames, params, prefix: str, cfg: ModelConfig) -> Tensor:
    """Shared-weight conv features per frame: [..., F, H, W, ch] -> [..., F, d]."""
    x = frames if isinstance(frames, Tensor) else Tensor(frames)
    if x.ndim < 4:
        raise InputError(f"frames must be [F, H, W, ch], got shape {x.shape}")
    x = _conv_pool_stack(x, params, prefix, len(cfg.frame_channels))
    *lead, f, h, w, c = x.shape
    x = T.reshape(x, tuple(lead) + (f, h * w * c))
    x = linear(x, params[f"{prefix}.proj_W"], params[f"{prefix}.proj_b"])
    return T.layer_norm(x, params[f"{prefix}.ln_g"], params[f"{prefix}.ln_b"])


def encode_frames(frames, params, cfg: ModelConfig,
                  train=False, rng=None) -> FeatureSequence:
    return FeatureSequence("frame", _encode_frame_stack(frames, params, "frame", cfg))


def encode_clips(frames, params, cfg: ModelConfig,
                 train=False, rng=None) -> FeatureSequence:
    """Temporal conv over sliding windows of clip_len frames, then mean over
    windows: one aggregated motion vector as a length-1 sequence."""
    x = frames if isinstance(frames, Tensor) else Tensor(frames)
    f_count = x.shape[-4]
    if f_count < cfg.clip_len:
        raise InputError(f"need at least clip_len={cfg.clip_len} frames, got {f_count}")
    feats = _encode_frame_stack(x, params, "clip", cfg)  # [..., F, d]
    windows = T.relu(T.conv1d(feats, params["clip.tconv"]))  # [..., F-clip_len+1, d]
    pooled = T.tmean(windows, axis=-2, keepdims=True)  # [..., 1, d]
    return FeatureSequence("clip", pooled)
