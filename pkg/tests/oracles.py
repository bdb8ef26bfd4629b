"""Independent oracles used by the test suite.

These deliberately avoid the library's own implementations: a naive DFT for
spectral checks, per-modality brute-force topic decoders, and a plain
confusion-matrix recount for metrics.
"""

import numpy as np


def naive_dft_magnitude(frame: np.ndarray) -> np.ndarray:
    """O(n^2) DFT magnitude of one windowed frame (bins 0..n/2)."""
    n = frame.size
    bins = n // 2 + 1
    out = np.zeros(bins)
    for k in range(bins):
        re = sum(frame[t] * np.cos(-2 * np.pi * k * t / n) for t in range(n))
        im = sum(frame[t] * np.sin(-2 * np.pi * k * t / n) for t in range(n))
        out[k] = np.hypot(re, im)
    return out


def naive_mel_frames(waveform, sample_rate, window, hop, n_mels, filterbank):
    """Log-mel frames computed with the naive DFT; mirrors the contract, not
    the implementation."""
    hann = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(window) / (window - 1))
    T = (len(waveform) - window) // hop + 1
    frames = np.zeros((T, n_mels))
    for t in range(T):
        seg = np.asarray(waveform[t * hop:t * hop + window]) * hann
        mag = naive_dft_magnitude(seg)
        frames[t] = np.log(np.maximum(filterbank @ mag, 1e-10))
    return frames


def decode_topic_text(sample, spec) -> int:
    """Token-histogram argmax over the per-topic vocabulary blocks."""
    block = (spec.vocab_size - 1) // spec.n_topics
    counts = [np.sum((sample.text_tokens >= 1 + z * block)
                     & (sample.text_tokens < 1 + (z + 1) * block))
              for z in range(spec.n_topics)]
    return int(np.argmax(counts))


def decode_topic_audio(sample, spec) -> int:
    """Mel-band argmax inside the signal window, mapped to the topic grid."""
    from mmfusion.encoders import mel_spectrogram
    mel = mel_spectrogram(sample.waveform, spec.sample_rate, spec.stft_window,
                          spec.stft_hop, spec.n_mels).frames.data
    ws, we = spec.signal_window
    band = int(np.argmax(mel[ws:we].mean(axis=0)))
    return int(np.argmin(np.abs(spec.topic_bands() - band)))


def decode_topic_video(sample, spec) -> int:
    """Stripe-pattern argmax over per-topic row bands."""
    stripe = spec.frame_size[0] // spec.n_topics
    energy = sample.frames.sum(axis=(0, 2, 3))
    scores = [energy[z * stripe:(z + 1) * stripe].sum() for z in range(spec.n_topics)]
    return int(np.argmax(scores))


def decode_label(sample, spec) -> int:
    zt = decode_topic_text(sample, spec)
    za = decode_topic_audio(sample, spec)
    zv = decode_topic_video(sample, spec)
    return 0 if zt == za == zv else 1


def recount_metrics(y_true, y_pred) -> dict:
    """Second, loop-based implementation of the metrics contract."""
    tp = fp = tn = fn = 0
    for t, p in zip(y_true, y_pred):
        if t == 1 and p == 1:
            tp += 1
        elif t == 0 and p == 1:
            fp += 1
        elif t == 0 and p == 0:
            tn += 1
        else:
            fn += 1

    def div(a, b):
        return a / b if b else 0.0

    precision = (div(tp, tp + fp) + div(tn, tn + fn)) / 2.0
    recall = (div(tp, tp + fn) + div(tn, tn + fp)) / 2.0
    f1 = div(2 * precision * recall, precision + recall)
    return {
        "accuracy": (tp + tn) / len(y_true),
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "tp": tp, "fp": fp, "tn": tn, "fn": fn,
    }
