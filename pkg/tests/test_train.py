"""Chronological splitting, training loop behaviour, and evaluation."""

import numpy as np
import pytest

from mmfusion.config import minimal_config
from mmfusion.data import CorpusSpec, generate_corpus
from mmfusion.errors import InputError
from mmfusion.train import (Checkpoint, chronological_split, evaluate,
                            predict, train)

from oracles import recount_metrics


def tiny_corpus(n=24, seed=0, **kw):
    spec = CorpusSpec(n_samples=n, seed=seed, stft_window=16, stft_hop=8,
                      waveform_len=64, n_mels=8, vocab_size=8, text_len=4,
                      user_len=3, comment_len=3, frame_size=(4, 4, 1),
                      n_frames=4, **kw)
    return generate_corpus(spec)


def tiny_config(**kw):
    return minimal_config(**kw)


class TestChronologicalSplit:
    @pytest.mark.parametrize("n", [10, 100, 101, 1000])
    def test_floor_floor_remainder(self, n):
        corpus = tiny_corpus(n=min(n, 100))
        # synthesize arbitrary n by repeating timestamps distinctly
        import dataclasses
        samples = [dataclasses.replace(corpus[i % len(corpus)], timestamp=i)
                   for i in range(n)]
        tr, va, te = chronological_split(samples)
        assert len(tr) == int(np.floor(0.70 * n))
        assert len(va) == int(np.floor(0.15 * n))
        assert len(te) == n - len(tr) - len(va)

    def test_chronological_order(self):
        rng = np.random.default_rng(0)
        import dataclasses
        corpus = tiny_corpus(n=20)
        shuffled = [dataclasses.replace(corpus[i], timestamp=int(t))
                    for i, t in enumerate(rng.permutation(1000)[:20])]
        rng.shuffle(shuffled)
        tr, va, te = chronological_split(shuffled)
        assert max(s.timestamp for s in tr) < min(s.timestamp for s in va)
        assert max(s.timestamp for s in va) < min(s.timestamp for s in te)

    def test_too_small(self):
        with pytest.raises(InputError):
            chronological_split(tiny_corpus(n=2))


class TestTrain:
    def test_epochs_zero_returns_init(self):
        cfg = tiny_config()
        ckpt, history = train(cfg, tiny_corpus(), epochs=0)
        assert history.epochs == []
        assert history.best_epoch is None
        from mmfusion.fusion import FusionModel
        init = FusionModel(cfg)
        for name in init.params:
            np.testing.assert_array_equal(ckpt.params[name].data,
                                          init.params[name].data)

    def test_deterministic(self):
        cfg = tiny_config()
        corpus = tiny_corpus()
        c1, h1 = train(cfg, corpus, epochs=2)
        c2, h2 = train(cfg, corpus, epochs=2)
        assert h1.to_dict() == h2.to_dict()
        for name in c1.params:
            np.testing.assert_array_equal(c1.params[name].data,
                                          c2.params[name].data)

    def test_history_records_every_epoch(self):
        cfg = tiny_config()
        ckpt, history = train(cfg, tiny_corpus(), epochs=3)
        assert [e.epoch for e in history.epochs] == [0, 1, 2]
        assert history.best_epoch is not None
        best = history.epochs[history.best_epoch].val["accuracy"]
        assert all(best >= e.val["accuracy"] for e in history.epochs)

    def test_best_epoch_ties_earliest(self):
        cfg = tiny_config()
        _, history = train(cfg, tiny_corpus(), epochs=4)
        best = history.epochs[history.best_epoch].val["accuracy"]
        first_hit = next(e.epoch for e in history.epochs
                         if e.val["accuracy"] == best)
        assert history.best_epoch == first_hit

    def test_overfit_single_batch_loss_decreases(self):
        # non-increasing trend over 50 steps on one repeated batch
        from mmfusion.data import collate
        from mmfusion.fusion import FusionModel
        from mmfusion.optim import AdamW, cross_entropy_batch
        cfg = tiny_config()
        corpus = tiny_corpus(n=8)
        model = FusionModel(cfg)
        opt = AdamW(model.params, lr=1e-3)
        batch = collate(corpus)
        labels = [s.label for s in corpus]
        rng = np.random.default_rng(0)
        losses = []
        for _ in range(50):
            loss = cross_entropy_batch(model.forward_batch(batch, train=True,
                                                           rng=rng), labels)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        assert losses[-1] < losses[0]
        # smoothed trend is non-increasing
        head = np.mean(losses[:10])
        tail = np.mean(losses[-10:])
        assert tail < head


class TestEvaluate:
    def test_metrics_match_recount(self):
        cfg = tiny_config()
        corpus = tiny_corpus(n=30)
        ckpt, _ = train(cfg, corpus, epochs=0)
        preds = predict(ckpt, corpus)
        rep = evaluate(ckpt, corpus).to_dict()
        expect = recount_metrics([s.label for s in corpus], preds)
        for key, val in expect.items():
            assert rep[key] == val

    def test_empty_rejected(self):
        cfg = tiny_config()
        ckpt, _ = train(cfg, tiny_corpus(), epochs=0)
        with pytest.raises(InputError):
            evaluate(ckpt, [])

    def test_checkpoint_roundtrip_reproduces_metrics(self, tmp_path):
        cfg = tiny_config()
        corpus = tiny_corpus()
        ckpt, _ = train(cfg, corpus, epochs=1)
        _, va, _ = chronological_split(corpus)
        before = evaluate(ckpt, va)
        path = tmp_path / "m.ckpt"
        ckpt.save(path)
        after = evaluate(Checkpoint.load(path), va)
        assert before == after
