"""Synthetic corpus generation, serialization, and misalignment injection."""

import numpy as np
import pytest

from mmfusion.data import (CorpusSpec, MultimodalSample, collate,
                           generate_corpus, inject_misalignment, load_corpus,
                           save_corpus)
from mmfusion.errors import InputError, PlanError

from oracles import (decode_label, decode_topic_audio, decode_topic_text,
                     decode_topic_video)


SMALL = CorpusSpec(n_samples=40, n_topics=4, seed=3)


class TestSpecValidation:
    def test_defaults_valid(self):
        spec = CorpusSpec()
        assert spec.n_samples == 2000
        assert spec.signal_window == (0, spec.audio_frames() // 2)

    @pytest.mark.parametrize("kwargs", [
        {"n_samples": 0},
        {"n_topics": 1},
        {"n_topics": 15, "n_mels": 16},
        {"fake_fraction": 0.0},
        {"fake_fraction": 1.0},
        {"noise_level": -0.1},
        {"signal_window": (5, 5)},
        {"signal_window": (0, 99)},
        {"n_topics": 9, "frame_size": (8, 8, 1)},
    ])
    def test_rejects(self, kwargs):
        with pytest.raises(PlanError):
            CorpusSpec(**kwargs)

    def test_roundtrip_dict(self):
        spec = CorpusSpec(n_samples=7, seed=9, signal_window=(2, 12))
        assert CorpusSpec.from_dict(spec.to_dict()) == spec
        assert CorpusSpec.from_dict(spec.to_dict()).hash() == spec.hash()

    def test_topic_bands_distinct(self):
        for k in (2, 3, 4, 8):
            bands = CorpusSpec(n_samples=1, n_topics=k).topic_bands()
            assert len(set(bands.tolist())) == k


class TestGeneration:
    def test_deterministic(self):
        a = generate_corpus(SMALL)
        b = generate_corpus(SMALL)
        assert a == b

    def test_seed_changes_payload(self):
        a = generate_corpus(SMALL)
        b = generate_corpus(CorpusSpec(n_samples=40, n_topics=4, seed=4))
        assert any(not np.array_equal(x.waveform, y.waveform) for x, y in zip(a, b))

    def test_exact_fake_count(self):
        for n, frac in ((40, 0.5), (41, 0.5), (100, 0.25)):
            corpus = generate_corpus(CorpusSpec(n_samples=n, fake_fraction=frac, seed=0))
            assert sum(s.label for s in corpus) == int(round(frac * n))

    def test_label_is_consistency(self):
        for s in generate_corpus(SMALL):
            consistent = s.topic_text == s.topic_audio == s.topic_video
            assert s.label == (0 if consistent else 1)

    def test_fake_always_breaks_audio(self):
        # the audio topic always disagrees with text on fakes, so the
        # text+audio pair is sufficient to recover the label
        for s in generate_corpus(CorpusSpec(n_samples=200, seed=1)):
            if s.label == 1:
                assert s.topic_audio != s.topic_text

    def test_timestamps_strictly_increasing(self):
        corpus = generate_corpus(SMALL)
        ts = [s.timestamp for s in corpus]
        assert ts == sorted(ts)
        assert len(set(ts)) == len(ts)

    def test_tone_confined_to_window(self):
        spec = CorpusSpec(n_samples=10, seed=0, decoy_tone=False)
        ws, we = spec.signal_window
        s0, s1 = ws * spec.stft_hop, we * spec.stft_hop
        for s in generate_corpus(spec):
            assert np.any(s.waveform[s0:s1] != 0.0)
            outside = np.concatenate([s.waveform[:s0], s.waveform[s1:]])
            assert np.all(outside == 0.0)

    def test_decoy_fills_outside_window(self):
        spec = CorpusSpec(n_samples=10, seed=0, decoy_tone=True)
        ws, we = spec.signal_window
        s1 = we * spec.stft_hop
        for s in generate_corpus(spec):
            assert np.any(s.waveform[s1:] != 0.0)


class TestOracleDecoders:
    """At zero noise the brute-force per-modality decoders must be perfect."""

    def test_text_decoder(self):
        corpus = generate_corpus(SMALL)
        assert all(decode_topic_text(s, SMALL) == s.topic_text for s in corpus)

    def test_audio_decoder(self):
        corpus = generate_corpus(SMALL)
        assert all(decode_topic_audio(s, SMALL) == s.topic_audio for s in corpus)

    def test_audio_decoder_with_decoy(self):
        spec = CorpusSpec(n_samples=40, n_topics=4, seed=3, decoy_tone=True)
        corpus = generate_corpus(spec)
        assert all(decode_topic_audio(s, spec) == s.topic_audio for s in corpus)

    def test_video_decoder(self):
        corpus = generate_corpus(SMALL)
        assert all(decode_topic_video(s, SMALL) == s.topic_video for s in corpus)

    def test_label_decoder(self):
        corpus = generate_corpus(SMALL)
        assert all(decode_label(s, SMALL) == s.label for s in corpus)

    def test_text_alone_uninformative(self):
        # topic_text is balanced across labels: knowing it gives no edge
        corpus = generate_corpus(CorpusSpec(n_samples=2000, seed=0))
        by_topic = {}
        for s in corpus:
            by_topic.setdefault(s.topic_text, []).append(s.label)
        for labels in by_topic.values():
            assert 0.4 < np.mean(labels) < 0.6


class TestMisalignment:
    def _spec(self):
        return CorpusSpec(n_samples=6, seed=2, decoy_tone=False)

    def test_zero_shift_identity(self):
        spec = self._spec()
        for s in generate_corpus(spec):
            shifted = inject_misalignment(s, 0, spec.stft_hop, spec.stft_window)
            assert shifted == s

    def test_roundtrip(self):
        spec = self._spec()
        for s in generate_corpus(spec):
            fwd = inject_misalignment(s, 5, spec.stft_hop, spec.stft_window)
            back = inject_misalignment(fwd, -5, spec.stft_hop, spec.stft_window)
            assert np.array_equal(back.waveform, s.waveform)

    def test_only_waveform_changes(self):
        spec = self._spec()
        s = generate_corpus(spec)[0]
        shifted = inject_misalignment(s, 3, spec.stft_hop, spec.stft_window)
        assert not np.array_equal(shifted.waveform, s.waveform)
        assert shifted.label == s.label
        assert np.array_equal(shifted.frames, s.frames)
        assert np.array_equal(shifted.text_tokens, s.text_tokens)

    def test_energy_preserved(self):
        spec = self._spec()
        s = generate_corpus(spec)[0]
        shifted = inject_misalignment(s, 7, spec.stft_hop, spec.stft_window)
        assert np.sum(shifted.waveform ** 2) == pytest.approx(np.sum(s.waveform ** 2))

    def test_excessive_shift_rejected(self):
        spec = self._spec()
        s = generate_corpus(spec)[0]
        with pytest.raises(InputError):
            inject_misalignment(s, spec.audio_frames() + 1,
                                spec.stft_hop, spec.stft_window)

    def test_moves_tone_out_of_window(self):
        spec = self._spec()
        ws, we = spec.signal_window
        s1 = we * spec.stft_hop
        s = generate_corpus(spec)[0]
        shifted = inject_misalignment(s, we, spec.stft_hop, spec.stft_window)
        assert np.all(shifted.waveform[:s1 - spec.stft_hop] == 0.0)


class TestCollate:
    def test_shapes(self):
        spec = self._spec = CorpusSpec(n_samples=5, seed=0)
        batch = collate(generate_corpus(spec))
        assert batch["text_tokens"].shape == (5, spec.text_len)
        assert batch["waveform"].shape == (5, spec.waveform_len)
        assert batch["frames"].shape == (5, spec.n_frames) + spec.frame_size
        assert batch["labels"].shape == (5,)


class TestSerialization:
    def test_roundtrip(self, tmp_path):
        spec = CorpusSpec(n_samples=12, seed=5)
        corpus = generate_corpus(spec)
        path = tmp_path / "c.bin"
        save_corpus(corpus, path, spec)
        loaded, loaded_spec = load_corpus(path)
        assert loaded_spec == spec
        assert loaded == corpus

    def test_byte_identical_rewrites(self, tmp_path):
        spec = CorpusSpec(n_samples=8, seed=1)
        corpus = generate_corpus(spec)
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        save_corpus(corpus, p1, spec)
        save_corpus(corpus, p2, spec)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOTACORP" + b"\x00" * 64)
        with pytest.raises(InputError):
            load_corpus(path)

    def test_truncation_names_record(self, tmp_path):
        spec = CorpusSpec(n_samples=4, seed=0)
        corpus = generate_corpus(spec)
        path = tmp_path / "c.bin"
        save_corpus(corpus, path, spec)
        blob = path.read_bytes()
        (tmp_path / "t.bin").write_bytes(blob[:len(blob) - 100])
        with pytest.raises(InputError, match="record"):
            load_corpus(tmp_path / "t.bin")
