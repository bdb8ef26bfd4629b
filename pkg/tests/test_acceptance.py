"""Acceptance gate: one test (and one printed pass/fail line) per criterion.

Training-based criteria retrain real models on the n=2000 consistency corpus
and take a few minutes each; everything else is fast. Thresholds are pinned
here and are not to be loosened.
"""

import json
import sys
import time

import numpy as np
import pytest

from mmfusion import cli
from mmfusion.config import ModelConfig, minimal_config
from mmfusion.data import CorpusSpec, generate_corpus, inject_misalignment
from mmfusion.fusion import FusionModel
from mmfusion.layers import ParamStore, init_attention_block, multi_head_attention
from mmfusion.metrics import metrics_from_predictions
from mmfusion.optim import AdamW
from mmfusion.tensor import Tensor
from mmfusion.train import Checkpoint, chronological_split, evaluate, train

from oracles import recount_metrics

EPOCHS = 30
CORPUS_SPEC = CorpusSpec(n_samples=2000, n_topics=4, noise_level=0.0, seed=0)


def report(criterion: int, passed: bool, detail: str) -> None:
    status = "PASS" if passed else "FAIL"
    print(f"CRITERION {criterion:2d} {status}: {detail}", file=sys.stderr)
    assert passed, f"criterion {criterion}: {detail}"


@pytest.fixture(scope="session")
def corpus():
    return generate_corpus(CORPUS_SPEC)


@pytest.fixture(scope="session")
def test_split(corpus):
    return chronological_split(corpus)[2]


def _train_arm(corpus, modalities, audio_encoder):
    cfg = ModelConfig(enabled_modalities=modalities, audio_encoder=audio_encoder,
                      seed=0)
    t0 = time.monotonic()
    ckpt, _ = train(cfg, corpus, epochs=EPOCHS)
    return ckpt, time.monotonic() - t0


@pytest.fixture(scope="session")
def vgg_arm(corpus):
    return _train_arm(corpus, ("audio", "text"), "vgg")


def test_criterion_01_gradient_oracle(tmp_path):
    out = tmp_path / "gc.json"
    t0 = time.monotonic()
    rc = cli.main(["gradcheck", "--out", str(out)])
    elapsed = time.monotonic() - t0
    result = json.loads(out.read_text())
    ok = rc == 0 and result["max_rel_err"] < 1e-3 and elapsed < 60.0
    report(1, ok, f"minimal-config max_rel_err {result['max_rel_err']:.3e} "
                  f"(< 1e-3), runtime {elapsed:.1f}s (< 60s)")


def test_criterion_02_attention_normalization():
    rng = np.random.default_rng(0)
    d = 8
    params = ParamStore()
    init_attention_block(params, "b", d, d, rng)
    cases = 0
    worst = 0.0
    for _ in range(250):
        lq = int(rng.integers(1, 7))
        lkv = int(rng.integers(1, 7))
        for heads in (1, 2, 4, 8):
            q = Tensor(rng.standard_normal((lq, d)))
            kv = Tensor(rng.standard_normal((lkv, d)))
            out, w = multi_head_attention(q, kv, params, "b", heads,
                                          return_weights=True)
            assert out.shape == (lq, d)
            worst = max(worst, float(np.abs(w.data.sum(axis=-1) - 1.0).max()))
            cases += 1
    ok = cases >= 1000 and worst < 1e-6
    report(2, ok, f"{cases} cases, worst row-sum deviation {worst:.2e} (< 1e-6), "
                  f"output length always equals query length")


def test_criterion_03_adamw_decoupling():
    model = FusionModel(minimal_config())
    lr, wd = 1e-3, 0.01
    opt = AdamW(model.params, lr=lr, weight_decay=wd)
    expected = {n: t.data.copy() for n, t in model.params.items()}
    exact = True
    for _ in range(10):
        for t in model.params.values():
            t.grad = np.zeros_like(t.data)
        opt.step()
        for n, t in model.params.items():
            expected[n] = expected[n] * (1.0 - lr * wd)
            exact &= np.array_equal(t.data, expected[n])
    report(3, exact, "10 zero-gradient steps shrink every parameter by exactly "
                     "(1 - lr*wd) per step")


def test_criterion_04_audio_contribution(corpus, test_split, vgg_arm):
    vgg_ckpt, vgg_seconds = vgg_arm
    text_ckpt, text_seconds = _train_arm(corpus, ("text",), "none")
    text_acc = evaluate(text_ckpt, test_split).accuracy
    audio_acc = evaluate(vgg_ckpt, test_split).accuracy
    total = vgg_seconds + text_seconds
    ok = text_acc <= 0.60 and audio_acc >= 0.90 and total <= 900.0
    report(4, ok, f"text-only {text_acc:.3f} (<= 0.60), text+audio {audio_acc:.3f} "
                  f"(>= 0.90), runtime {total:.0f}s (<= 900s)")


def test_criterion_05_misalignment(corpus, test_split):
    ckpt, _ = _train_arm(corpus, ("audio", "text", "video"), "vgg")
    shifts = [0, 4, 8, 12, 16]
    accs = []
    for shift in shifts:
        shifted = [inject_misalignment(s, shift, CORPUS_SPEC.stft_hop,
                                       CORPUS_SPEC.stft_window)
                   for s in test_split]
        accs.append(evaluate(ckpt, shifted).accuracy)
    drop = accs[0] - accs[-1]
    monotone = all(accs[i + 1] <= accs[i] + 0.03 for i in range(len(accs) - 1))
    ok = drop >= 0.15 and monotone
    curve = ", ".join(f"{s}:{a:.3f}" for s, a in zip(shifts, accs))
    report(5, ok, f"sweep [{curve}]; drop {drop:.3f} (>= 0.15), "
                  f"non-increasing within 0.03 per step: {monotone}")


def test_criterion_06_encoder_parity(tmp_path, corpus):
    from mmfusion.data import save_corpus
    corpus_path = tmp_path / "corpus.bin"
    save_corpus(corpus, corpus_path, CORPUS_SPEC)
    plan = {
        "corpus": str(corpus_path),
        "variants": [{"id": "ta", "modalities": ["audio", "text"]}],
        "seeds": [0],
        "epochs": 60,
        "weight_decay": 0.05,
        "out": str(tmp_path / "cmp"),
    }
    plan_path = tmp_path / "plan.json"
    plan_path.write_text(json.dumps(plan))
    rc = cli.main(["compare-audio", "--plan", str(plan_path)])
    result = json.loads((tmp_path / "cmp" / "results.json").read_text())
    rows = {r["variant"]: r for r in result["rows"]}
    metric_keys = ("accuracy", "f1", "precision", "recall")
    arms_ok = set(rows) == {"ta_vgg", "ta_w2v"}
    metrics_ok = all(k in r for r in result["rows"] for k in metric_keys)
    prov = result.get("provenance", {})
    prov_ok = all(k in prov for k in ("tool", "version", "corpus_spec_hash",
                                      "config_hashes", "seeds"))
    vgg_acc = rows["ta_vgg"]["accuracy"]
    w2v_acc = rows["ta_w2v"]["accuracy"]
    ok = (rc == 0 and arms_ok and metrics_ok and prov_ok
          and vgg_acc >= 0.90 and w2v_acc >= 0.90)
    report(6, ok, f"comparison report: vgg {vgg_acc:.3f}, w2v {w2v_acc:.3f} "
                  f"(both >= 0.90), full metrics {metrics_ok}, "
                  f"provenance {prov_ok}")


def test_criterion_07_split_exactness():
    import dataclasses
    base = generate_corpus(CorpusSpec(n_samples=10, seed=0))
    ok = True
    details = []
    for n in (10, 100, 101, 1000):
        samples = [dataclasses.replace(base[i % 10], timestamp=i)
                   for i in range(n)]
        tr, va, te = chronological_split(samples)
        sizes_ok = (len(tr) == int(np.floor(0.70 * n))
                    and len(va) == int(np.floor(0.15 * n))
                    and len(te) == n - len(tr) - len(va))
        chrono_ok = max(s.timestamp for s in tr) < min(s.timestamp for s in te)
        ok &= sizes_ok and chrono_ok
        details.append(f"n={n}:{len(tr)}/{len(va)}/{len(te)}")
    report(7, ok, "floor/floor/remainder sizes and train-before-test order: "
                  + ", ".join(details))


def test_criterion_08_metrics_oracle():
    rng = np.random.default_rng(123)
    exact = True
    for _ in range(500):
        n = int(rng.integers(1, 80))
        y_true = rng.integers(0, 2, size=n)
        y_pred = rng.integers(0, 2, size=n)
        got = metrics_from_predictions(y_true, y_pred).to_dict()
        want = recount_metrics(y_true, y_pred)
        exact &= all(got[k] == v for k, v in want.items())
    report(8, exact, "500 random prediction vectors: accuracy/precision/recall/F1 "
                     "equal the brute-force recount exactly")


def test_criterion_09_report_determinism(tmp_path):
    gen_args = ["gen", "--n-samples", "30", "--seed", "7"]
    c1, c2 = tmp_path / "c1.bin", tmp_path / "c2.bin"
    assert cli.main(gen_args + ["--out", str(c1)]) == 0
    assert cli.main(gen_args + ["--out", str(c2)]) == 0
    corpora_ok = c1.read_bytes() == c2.read_bytes()

    plan = {
        "corpus": str(c1),
        "variants": [{"id": "t", "modalities": ["text"], "d_model": 8,
                      "n_heads": 1, "encoder_depth": 1, "ff_mult": 1}],
        "seeds": [0, 1],
        "epochs": 1,
        "batch_size": 8,
    }
    outputs = []
    for run in ("r1", "r2"):
        plan["out"] = str(tmp_path / run)
        plan_path = tmp_path / f"plan_{run}.json"
        plan_path.write_text(json.dumps(plan))
        assert cli.main(["ablate", "--plan", str(plan_path)]) == 0
        outputs.append((
            (tmp_path / run / "results.csv").read_bytes(),
            (tmp_path / run / "results.json").read_bytes(),
        ))
    reports_ok = outputs[0] == outputs[1]
    ok = corpora_ok and reports_ok
    report(9, ok, f"byte-identical reruns: corpus {corpora_ok}, "
                  f"ablate CSV+JSON {reports_ok}")


def test_criterion_10_checkpoint_roundtrip(tmp_path):
    corpus = generate_corpus(CorpusSpec(n_samples=60, seed=0))
    cfg = minimal_config(vocab_size=256, max_text_len=32, stft_window=64,
                         stft_hop=32, n_mels=16, frame_size=(8, 8, 1),
                         clip_len=2)
    ckpt, _ = train(cfg, corpus, epochs=1, batch_size=8)
    _, val_split, _ = chronological_split(corpus)
    before = evaluate(ckpt, val_split)
    path = tmp_path / "m.ckpt"
    ckpt.save(path)
    after = evaluate(Checkpoint.load(path), val_split)
    ok = before == after
    report(10, ok, "save -> load -> re-evaluate reproduces validation metrics "
                   "bit-exactly")
