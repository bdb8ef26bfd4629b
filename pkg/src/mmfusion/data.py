"""Synthetic cross-modal-consistency corpus.

Ground truth is a consistency relation: a sample is real (label 0) iff its
hidden topic code agrees across text, audio, and video. No single modality
carries the label, so any accuracy above chance requires fusing modalities.

Topic carriers:
  text  - tokens drawn from a topic-specific vocabulary block
  audio - a sinusoid at the topic's mel-band center frequency, placed inside
          the signal window; a decoy tone of a different topic fills the rest
          of the waveform, so the window position is what disambiguates them
  video - a topic-specific horizontal stripe pattern in the frames that
          overlap the signal window; other frames stay blank

Generation is deterministic: per-sample streams come from a counter-based
Philox generator keyed by (seed, sample index), so output is independent of
generation order.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .encoders import mel_band_centers
from .errors import InputError, PlanError

FORMAT_MAGIC = b"MMCORP1\n"
FORMAT_VERSION = 1

DEFAULT_SAMPLE_RATE = 8000
DEFAULT_STFT_WINDOW = 64
DEFAULT_STFT_HOP = 32


@dataclass
class MultimodalSample:
    """One synthetic short-video post. The topic_* codes are generation-time
    ground truth for oracle tests and are never fed to the model."""
    id: str
    timestamp: int
    text_tokens: np.ndarray
    waveform: np.ndarray
    frames: np.ndarray  # [F, H, W, ch]
    user_tokens: np.ndarray
    comment_tokens: np.ndarray
    label: int  # 0 = real, 1 = fake
    topic_text: int
    topic_audio: int
    topic_video: int

    def __eq__(self, other):
        if not isinstance(other, MultimodalSample):
            return NotImplemented
        return (self.id == other.id and self.timestamp == other.timestamp
                and self.label == other.label
                and self.topic_text == other.topic_text
                and self.topic_audio == other.topic_audio
                and self.topic_video == other.topic_video
                and np.array_equal(self.text_tokens, other.text_tokens)
                and np.array_equal(self.waveform, other.waveform)
                and np.array_equal(self.frames, other.frames)
                and np.array_equal(self.user_tokens, other.user_tokens)
                and np.array_equal(self.comment_tokens, other.comment_tokens))


@dataclass
class CorpusSpec:
    n_samples: int = 2000
    n_topics: int = 4
    noise_level: float = 0.0
    fake_fraction: float = 0.5
    seed: int = 0
    # signal placement window in mel-frame indices; None -> first half
    signal_window: Optional[Tuple[int, int]] = None
    social_signal: bool = False
    # fill the waveform outside the window with a different topic's tone, so
    # decoding the audio topic requires attending to the window itself (and
    # shifting audio against the window genuinely degrades it)
    decoy_tone: bool = True
    # per-sample random tone phase; with False every topic has one canonical
    # waveform, which removes a memorizable per-sample fingerprint
    random_phase: bool = True
    # probability that a fake sample also breaks the text/video agreement
    # (the text/audio agreement always breaks); kept small so video alone is
    # a weak label signal and audio carries most of it
    video_break_prob: float = 0.25

    # payload geometry (kept in the spec so corpus files are self-describing)
    waveform_len: int = 1024
    sample_rate: int = DEFAULT_SAMPLE_RATE
    stft_window: int = DEFAULT_STFT_WINDOW
    stft_hop: int = DEFAULT_STFT_HOP
    n_mels: int = 16
    vocab_size: int = 256
    text_len: int = 16
    user_len: int = 8
    comment_len: int = 8
    n_frames: int = 8
    frame_size: Tuple[int, int, int] = (8, 8, 1)

    def __post_init__(self):
        if self.n_samples < 1:
            raise PlanError("n_samples must be >= 1")
        if self.n_topics < 2:
            raise PlanError("n_topics must be >= 2")
        if self.n_topics > self.n_mels - 2:
            raise PlanError(
                f"n_topics={self.n_topics} exceeds representable mel bands "
                f"({self.n_mels - 2} with n_mels={self.n_mels})")
        if self.n_topics > self.frame_size[0]:
            raise PlanError("n_topics exceeds frame height; stripe patterns collide")
        if not 0.0 < self.fake_fraction < 1.0:
            raise PlanError("fake_fraction must lie in (0, 1)")
        if self.noise_level < 0.0:
            raise PlanError("noise_level must be >= 0")
        if not 0.0 <= self.video_break_prob <= 1.0:
            raise PlanError("video_break_prob must lie in [0, 1]")
        if self.signal_window is None:
            self.signal_window = (0, self.audio_frames() // 2)
        else:
            self.signal_window = tuple(self.signal_window)
        ws, we = self.signal_window
        if not 0 <= ws < we <= self.audio_frames():
            raise PlanError(
                f"signal_window {self.signal_window} invalid for {self.audio_frames()} frames")

    def audio_frames(self) -> int:
        return (self.waveform_len - self.stft_window) // self.stft_hop + 1

    def topic_bands(self) -> np.ndarray:
        """Mel band index assigned to each topic, evenly spread over the
        interior bands."""
        return np.round(np.linspace(1, self.n_mels - 2, self.n_topics)).astype(int)

    def topic_freqs(self) -> np.ndarray:
        centers = mel_band_centers(self.n_mels, self.sample_rate)
        return centers[self.topic_bands()]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["signal_window"] = list(self.signal_window)
        d["frame_size"] = list(self.frame_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusSpec":
        d = dict(d)
        d["signal_window"] = tuple(d["signal_window"])
        d["frame_size"] = tuple(d["frame_size"])
        return cls(**d)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]


def _sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed, index]))


def _topic_tokens(rng, topic: int, n_topics: int, vocab: int, length: int) -> np.ndarray:
    # token 0 is reserved as PAD; the rest is split into per-topic blocks
    block = (vocab - 1) // n_topics
    lo = 1 + topic * block
    return rng.integers(lo, lo + block, size=length, dtype=np.int64)


def generate_corpus(spec: CorpusSpec) -> List[MultimodalSample]:
    n = spec.n_samples
    n_fake = int(round(spec.fake_fraction * n))
    label_perm = np.random.default_rng(spec.seed).permutation(n)
    labels = np.zeros(n, dtype=np.int64)
    labels[label_perm[:n_fake]] = 1
    freqs = spec.topic_freqs()
    return [_generate_sample(spec, i, int(labels[i]), freqs) for i in range(n)]


def _generate_sample(spec: CorpusSpec, index: int, label: int,
                     freqs: np.ndarray) -> MultimodalSample:
    rng = _sample_rng(spec.seed, index)
    k = spec.n_topics
    z_text = int(rng.integers(k))
    if label == 0:
        z_audio = z_video = z_text
    else:
        z_audio = int((z_text + 1 + rng.integers(k - 1)) % k)
        # fixed draw count regardless of the branch, so per-sample streams
        # are stable under video_break_prob changes
        vid_u = rng.random()
        vid_off = int(rng.integers(k - 1))
        z_video = int((z_text + 1 + vid_off) % k) if vid_u < spec.video_break_prob else z_text
    z_decoy = int((z_audio + 1 + rng.integers(k - 1)) % k)

    text_tokens = _topic_tokens(rng, z_text, k, spec.vocab_size, spec.text_len)

    # audio: topic tone inside the window, decoy tone elsewhere
    t = np.arange(spec.waveform_len) / spec.sample_rate
    ws, we = spec.signal_window
    s0, s1 = ws * spec.stft_hop, we * spec.stft_hop
    decoy_phase = rng.uniform(0, 2 * np.pi)
    tone_phase = rng.uniform(0, 2 * np.pi)
    if not spec.random_phase:
        decoy_phase = tone_phase = 0.0
    if spec.decoy_tone:
        wav = np.sin(2.0 * np.pi * freqs[z_decoy] * t + decoy_phase)
    else:
        wav = np.zeros(spec.waveform_len)
    tone = np.sin(2.0 * np.pi * freqs[z_audio] * t + tone_phase)
    wav[s0:s1] = tone[s0:s1]
    if spec.noise_level > 0:
        wav = wav + spec.noise_level * rng.standard_normal(spec.waveform_len)

    # video: stripe pattern for z_video in the frames overlapping the window
    F = spec.n_frames
    H, W, C = spec.frame_size
    frames = np.zeros((F, H, W, C))
    T_a = spec.audio_frames()
    f0 = int(np.floor(ws / T_a * F))
    f1 = max(f0 + 1, int(np.ceil(we / T_a * F)))
    stripe = H // spec.n_topics
    frames[f0:f1, z_video * stripe:(z_video + 1) * stripe, :, :] = 1.0
    if spec.noise_level > 0:
        frames = frames + spec.noise_level * rng.standard_normal(frames.shape)

    user_tokens = rng.integers(1, spec.vocab_size, size=spec.user_len, dtype=np.int64)
    comment_tokens = rng.integers(1, spec.vocab_size, size=spec.comment_len,
                                  dtype=np.int64)
    if spec.social_signal and rng.random() < 0.7:
        # weak, noisy hint: last comment token leans toward the label
        comment_tokens[-1] = spec.vocab_size - 1 if label == 1 else spec.vocab_size - 2

    return MultimodalSample(
        id=f"s{index:06d}",
        timestamp=index,
        text_tokens=text_tokens,
        waveform=wav,
        frames=frames,
        user_tokens=user_tokens,
        comment_tokens=comment_tokens,
        label=label,
        topic_text=z_text,
        topic_audio=z_audio,
        topic_video=z_video,
    )


def inject_misalignment(sample: MultimodalSample, shift: int,
                        hop: int = DEFAULT_STFT_HOP,
                        window: int = DEFAULT_STFT_WINDOW) -> MultimodalSample:
    """Circularly shift the audio waveform by ``shift`` analysis frames
    (shift * hop samples); every other modality and the label stay put."""
    n_frames = (len(sample.waveform) - window) // hop + 1
    if abs(shift) > n_frames:
        raise InputError(f"shift {shift} exceeds audio frame count {n_frames}")
    return dataclasses.replace(sample, waveform=np.roll(sample.waveform, shift * hop))


def collate(samples: List[MultimodalSample]) -> dict:
    """Stack per-sample payloads into batch arrays for the fusion model."""
    return {
        "text_tokens": np.stack([s.text_tokens for s in samples]),
        "waveform": np.stack([s.waveform for s in samples]),
        "frames": np.stack([s.frames for s in samples]),
        "user_tokens": np.stack([s.user_tokens for s in samples]),
        "comment_tokens": np.stack([s.comment_tokens for s in samples]),
        "labels": np.array([s.label for s in samples], dtype=np.int64),
    }


# ---------------------------------------------------------------------------
# on-disk container: JSON header + length-prefixed binary records


def save_corpus(corpus: List[MultimodalSample], path, spec: CorpusSpec) -> None:
    header = {
        "format": "mmfusion-corpus",
        "version": FORMAT_VERSION,
        "n_samples": len(corpus),
        "spec": spec.to_dict(),
    }
    hjson = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(FORMAT_MAGIC)
        fh.write(struct.pack("<Q", len(hjson)))
        fh.write(hjson)
        for s in corpus:
            rec = _encode_record(s)
            fh.write(struct.pack("<Q", len(rec)))
            fh.write(rec)


def _encode_record(s: MultimodalSample) -> bytes:
    meta = {
        "id": s.id,
        "timestamp": s.timestamp,
        "label": s.label,
        "topic_text": s.topic_text,
        "topic_audio": s.topic_audio,
        "topic_video": s.topic_video,
        "text_len": int(s.text_tokens.size),
        "waveform_len": int(s.waveform.size),
        "frames_shape": list(s.frames.shape),
        "user_len": int(s.user_tokens.size),
        "comment_len": int(s.comment_tokens.size),
    }
    mjson = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    parts = [struct.pack("<Q", len(mjson)), mjson]
    for arr, dt in ((s.text_tokens, "<i8"), (s.waveform, "<f8"),
                    (s.frames, "<f8"), (s.user_tokens, "<i8"),
                    (s.comment_tokens, "<i8")):
        parts.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    return b"".join(parts)


def load_corpus(path):
    """Returns (corpus, spec). Raises InputError naming the failing record
    on truncated or malformed files."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(FORMAT_MAGIC):
        raise InputError("not a corpus file: bad magic")
    off = len(FORMAT_MAGIC)
    try:
        (hlen,) = struct.unpack_from("<Q", blob, off)
        off += 8
        header = json.loads(blob[off:off + hlen])
        off += hlen
    except (struct.error, json.JSONDecodeError) as e:
        raise InputError(f"corpus header unreadable: {e}") from e
    if header.get("version") != FORMAT_VERSION:
        raise InputError(f"unsupported corpus format version {header.get('version')}")
    spec = CorpusSpec.from_dict(header["spec"])
    corpus = []
    for i in range(header["n_samples"]):
        try:
            (rlen,) = struct.unpack_from("<Q", blob, off)
            off += 8
            rec = blob[off:off + rlen]
            if len(rec) != rlen:
                raise InputError(f"corpus truncated at record {i}")
            off += rlen
            corpus.append(_decode_record(rec, i))
        except (struct.error, json.JSONDecodeError, KeyError) as e:
            raise InputError(f"corpus parse error at record {i}: {e}") from e
    return corpus, spec


def _decode_record(rec: bytes, index: int) -> MultimodalSample:
    (mlen,) = struct.unpack_from("<Q", rec, 0)
    meta = json.loads(rec[8:8 + mlen])
    off = 8 + mlen

    def take(count, dt):
        nonlocal off
        nbytes = count * 8
        if off + nbytes > len(rec):
            raise InputError(f"corpus truncated inside record {index}")
        arr = np.frombuffer(rec, dtype=dt, count=count, offset=off).copy()
        off += nbytes
        return arr

    text = take(meta["text_len"], "<i8")
    wav = take(meta["waveform_len"], "<f8")
    fshape = tuple(meta["frames_shape"])
    frames = take(int(np.prod(fshape)), "<f8").reshape(fshape)
    user = take(meta["user_len"], "<i8")
    comment = take(meta["comment_len"], "<i8")
    return MultimodalSample(
        id=meta["id"], timestamp=meta["timestamp"],
        text_tokens=text, waveform=wav, frames=frames,
        user_tokens=user, comment_tokens=comment,
        label=meta["label"], topic_text=meta["topic_text"],
        topic_audio=meta["topic_audio"], topic_video=meta["topic_video"],
    )
