"""Experiment-runner command line tool.

Verbs: gen, train, eval, ablate, compare-audio, misalign, gradcheck. All
reports (CSV and JSON) are byte-deterministic for a fixed plan and seeds;
wall-clock timings go to a separate timings file that is exempt from the
determinism guarantee.

Exit codes: 0 success, 1 usage error, 2 validation or plan error, 3 numeric
failure (training divergence or gradient-check threshold violation).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import tensor as T
from .config import ModelConfig, minimal_config
from .data import (CorpusSpec, generate_corpus, inject_misalignment,
                   load_corpus, save_corpus)
from .errors import InputError, PlanError, TrainingDiverged
from .fusion import FusionModel
from .gradcheck import grad_check
from .optim import cross_entropy_batch
from .train import Checkpoint, chronological_split, evaluate, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PLAN = 2
EXIT_NUMERIC = 3

CSV_COLUMNS = ("variant", "audio_encoder", "audio", "text", "video", "social",
               "seed", "accuracy", "f1", "precision", "recall")

GRADCHECK_THRESHOLD = 1e-3


def _fmt(x: float) -> str:
    return f"{float(x):.4f}"


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _provenance(corpus_spec=None, configs=None, seeds=None) -> dict:
    block = {"tool": "mmfusion", "version": __version__}
    if corpus_spec is not None:
        block["corpus_spec_hash"] = corpus_spec.hash()
    if configs:
        block["config_hashes"] = {vid: cfg.hash() for vid, cfg in configs.items()}
    if seeds is not None:
        block["seeds"] = list(seeds)
    return block


# ---------------------------------------------------------------------------
# plans


class Plan:
    """Validated experiment plan shared by ablate / compare-audio / misalign."""

    def __init__(self, corpus_path, corpus_spec, variants, seeds, shifts,
                 epochs, batch_size, lr, weight_decay, out_dir):
        self.corpus_path = corpus_path
        self.corpus_spec = corpus_spec
        self.variants = variants  # list of (variant_id, config_overrides)
        self.seeds = seeds
        self.shifts = shifts
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.out_dir = out_dir

    @classmethod
    def from_args(cls, args) -> "Plan":
        if getattr(args, "plan", None):
            try:
                raw = json.loads(Path(args.plan).read_text())
            except (OSError, json.JSONDecodeError) as e:
                raise PlanError(f"cannot read plan file: {e}") from e
        else:
            raw = {}
        corpus_path = raw.get("corpus", getattr(args, "corpus", None))
        spec_dict = raw.get("corpus_spec")
        corpus_spec = CorpusSpec.from_dict(spec_dict) if spec_dict else None
        if corpus_path is None and corpus_spec is None:
            raise PlanError("plan needs a corpus path or a corpus_spec")
        variants = []
        for entry in raw.get("variants", []):
            if "id" not in entry:
                raise PlanError("every variant needs an 'id'")
            if "modalities" not in entry:
                raise PlanError(
                    f"variant {entry['id']!r} must name its modality mask explicitly")
            variants.append((entry["id"], dict(entry)))
        seeds = raw.get("seeds", getattr(args, "seeds", None) or [0])
        if len(seeds) < 1:
            raise PlanError("at least one seed is required")
        if len(set(seeds)) != len(seeds):
            raise PlanError("seeds must be distinct")
        shifts = raw.get("shifts", getattr(args, "shifts", None))
        out_dir = raw.get("out", getattr(args, "out", None))
        if out_dir is None:
            raise PlanError("plan needs an output directory (--out)")
        return cls(
            corpus_path=corpus_path,
            corpus_spec=corpus_spec,
            variants=variants,
            seeds=[int(s) for s in seeds],
            shifts=[int(s) for s in shifts] if shifts is not None else None,
            epochs=int(raw.get("epochs", getattr(args, "epochs", 30))),
            batch_size=int(raw.get("batch_size", getattr(args, "batch_size", 64))),
            lr=float(raw.get("lr", getattr(args, "lr", 1e-3))),
            weight_decay=float(raw.get("weight_decay",
                                       getattr(args, "weight_decay", 0.01))),
            out_dir=Path(out_dir),
        )

    def load_corpus(self):
        if self.corpus_path is not None:
            corpus, spec = load_corpus(self.corpus_path)
            return corpus, spec
        return generate_corpus(self.corpus_spec), self.corpus_spec


def variant_config(entry: dict, seed: int) -> ModelConfig:
    """Build a ModelConfig for one plan variant; plan mistakes surface as
    PlanError."""
    modalities = tuple(entry["modalities"])
    audio_encoder = entry.get("audio_encoder",
                              "vgg" if "audio" in modalities else "none")
    if "audio" in modalities and audio_encoder == "none":
        raise PlanError(
            f"variant {entry['id']!r} enables audio but names no audio encoder")
    overrides = {k: v for k, v in entry.items()
                 if k not in ("id", "modalities", "audio_encoder")}
    try:
        return ModelConfig(enabled_modalities=modalities,
                           audio_encoder=audio_encoder, seed=seed, **overrides)
    except (TypeError, ValueError) as e:
        raise PlanError(f"variant {entry['id']!r} is invalid: {e}") from e


# ---------------------------------------------------------------------------
# result tables


def _mask(cfg: ModelConfig) -> dict:
    return {m: int(cfg.enabled(m)) for m in ("audio", "text", "video", "social")}


def result_row(variant_id: str, cfg: ModelConfig, seed: int, metrics: dict) -> dict:
    row = {"variant": variant_id, "audio_encoder": cfg.audio_encoder}
    row.update(_mask(cfg))
    row["seed"] = seed
    row.update({k: metrics[k] for k in ("accuracy", "f1", "precision", "recall")})
    return row


def aggregate_rows(rows) -> list:
    """Mean and population std per variant over its seed rows."""
    out = []
    seen = []
    for row in rows:
        if row["variant"] not in seen:
            seen.append(row["variant"])
    for vid in seen:
        group = [r for r in rows if r["variant"] == vid]
        for stat, fn in (("mean", np.mean), ("std", np.std)):
            agg = dict(group[0])
            agg["seed"] = stat
            for k in ("accuracy", "f1", "precision", "recall"):
                agg[k] = float(fn([g[k] for g in group]))
            out.append(agg)
    return out


def write_result_table(out_dir: Path, rows, aggregates, provenance,
                       timings=None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [",".join(CSV_COLUMNS)]
    for row in list(rows) + list(aggregates):
        cells = []
        for col in CSV_COLUMNS:
            v = row[col]
            cells.append(_fmt(v) if isinstance(v, float) else str(v))
        lines.append(",".join(cells))
    (out_dir / "results.csv").write_text("\n".join(lines) + "\n")
    _write_json(out_dir / "results.json", {
        "provenance": provenance,
        "rows": rows,
        "aggregates": aggregates,
    })
    if timings is not None:
        tlines = ["variant,seed,seconds"]
        tlines += [f"{v},{s},{t:.2f}" for v, s, t in timings]
        (out_dir / "timings.csv").write_text("\n".join(tlines) + "\n")


def run_variants(plan: Plan, corpus):
    """Train and evaluate every (variant, seed) pair; rows ordered by the
    plan's variant order, then seed."""
    if not plan.variants:
        raise PlanError("plan contains no variants")
    rows, timings, checkpoints = [], [], {}
    configs = {}
    for vid, entry in plan.variants:
        for seed in plan.seeds:
            cfg = variant_config(entry, seed)
            configs[vid] = cfg
            t0 = time.monotonic()
            ckpt, _ = train(cfg, corpus, epochs=plan.epochs,
                            batch_size=plan.batch_size, lr=plan.lr,
                            weight_decay=plan.weight_decay)
            _, _, test_set = chronological_split(corpus)
            metrics = evaluate(ckpt, test_set).to_dict()
            timings.append((vid, seed, time.monotonic() - t0))
            rows.append(result_row(vid, cfg, seed, metrics))
            checkpoints[(vid, seed)] = ckpt
    return rows, timings, checkpoints, configs


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    spec = CorpusSpec(
        n_samples=args.n_samples, n_topics=args.n_topics,
        noise_level=args.noise_level, fake_fraction=args.fake_fraction,
        seed=args.seed, social_signal=args.social_signal,
        decoy_tone=args.decoy_tone)
    corpus = generate_corpus(spec)
    save_corpus(corpus, args.out, spec)
    print(f"wrote {len(corpus)} samples to {args.out} (spec {spec.hash()})")
    return EXIT_OK


def _load_config_arg(path) -> ModelConfig:
    if path is None:
        return ModelConfig()
    try:
        return ModelConfig.from_dict(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError, TypeError, ValueError, KeyError) as e:
        raise PlanError(f"cannot read model config {path}: {e}") from e


def cmd_train(args) -> int:
    corpus, spec = load_corpus(args.corpus)
    cfg = _load_config_arg(args.config)
    if args.seed is not None:
        import dataclasses
        cfg = dataclasses.replace(cfg, seed=args.seed)
    ckpt, history = train(cfg, corpus, epochs=args.epochs,
                          batch_size=args.batch_size, lr=args.lr,
                          weight_decay=args.weight_decay, verbose=args.verbose)
    ckpt.save(args.out)
    if args.history:
        _write_json(Path(args.history), {
            "provenance": _provenance(spec, {"model": cfg}, [cfg.seed]),
            "history": history.to_dict(),
        })
    print(f"saved checkpoint to {args.out} (config {cfg.hash()})")
    return EXIT_OK


def _split_part(corpus, which):
    if which == "all":
        return corpus
    tr, va, te = chronological_split(corpus)
    return {"train": tr, "val": va, "test": te}[which]


def cmd_eval(args) -> int:
    corpus, spec = load_corpus(args.corpus)
    ckpt = Checkpoint.load(args.checkpoint)
    part = _split_part(corpus, args.split)
    metrics = evaluate(ckpt, part).to_dict()
    report = {
        "provenance": _provenance(spec, {"model": ckpt.config},
                                  [ckpt.config.seed]),
        "split": args.split,
        "n": len(part),
        "metrics": metrics,
    }
    if args.out:
        _write_json(Path(args.out), report)
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def cmd_ablate(args) -> int:
    plan = Plan.from_args(args)
    corpus, spec = plan.load_corpus()
    rows, timings, _, configs = run_variants(plan, corpus)
    provenance = _provenance(spec, configs, plan.seeds)
    write_result_table(plan.out_dir, rows, aggregate_rows(rows), provenance,
                       timings)
    print(f"wrote {len(rows)} rows to {plan.out_dir / 'results.csv'}")
    return EXIT_OK


def cmd_compare_audio(args) -> int:
    plan = Plan.from_args(args)
    for _, entry in plan.variants:
        if "audio" not in entry["modalities"]:
            raise PlanError("compare-audio variants must enable audio")
    expanded = []
    for vid, entry in plan.variants:
        for encoder in ("vgg", "w2v"):
            arm = dict(entry)
            arm["id"] = f"{vid}_{encoder}"
            arm["audio_encoder"] = encoder
            expanded.append((arm["id"], arm))
    plan.variants = expanded
    corpus, spec = plan.load_corpus()
    rows, timings, _, configs = run_variants(plan, corpus)
    provenance = _provenance(spec, configs, plan.seeds)
    write_result_table(plan.out_dir, rows, aggregate_rows(rows), provenance,
                       timings)
    print(f"wrote {len(rows)} rows to {plan.out_dir / 'results.csv'}")
    return EXIT_OK


def cmd_misalign(args) -> int:
    plan = Plan.from_args(args)
    if not plan.shifts:
        raise PlanError("misalign needs a non-empty shift list (--shifts)")
    if plan.shifts[0] != 0:
        raise PlanError("the first shift must be 0 (the aligned baseline)")
    corpus, spec = plan.load_corpus()
    max_frames = (len(corpus[0].waveform) - spec.stft_window) // spec.stft_hop + 1
    for s in plan.shifts:
        if abs(s) > max_frames:
            raise PlanError(f"shift {s} exceeds audio frame count {max_frames}")
    rows, timings, checkpoints, configs = run_variants(plan, corpus)
    _, _, test_set = chronological_split(corpus)
    curve_rows = []
    sweep_rows = []
    for (vid, seed), ckpt in sorted(checkpoints.items()):
        cfg = configs[vid]
        for shift in plan.shifts:
            shifted = [inject_misalignment(s, shift, spec.stft_hop,
                                           spec.stft_window) for s in test_set]
            metrics = evaluate(ckpt, shifted).to_dict()
            curve_rows.append((vid, seed, shift, metrics["accuracy"]))
            row = result_row(vid, cfg, seed, metrics)
            row["variant"] = f"{vid}_shift{shift}"
            sweep_rows.append(row)
    provenance = _provenance(spec, configs, plan.seeds)
    provenance["shifts"] = plan.shifts
    write_result_table(plan.out_dir, sweep_rows, aggregate_rows(sweep_rows),
                       provenance, timings)
    lines = ["shift,accuracy"]
    lines += [f"{shift},{_fmt(acc)}" for _, _, shift, acc in curve_rows]
    (plan.out_dir / "curve.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote sweep over {len(plan.shifts)} shifts to {plan.out_dir}")
    return EXIT_OK


def _gradcheck_batch(cfg: ModelConfig, rng) -> tuple:
    """Smooth random payloads: continuous inputs keep finite differences away
    from relu/maxpool kinks that corpus-style 0/1 payloads sit on."""
    B, L = 1, 3
    wav_len = max(cfg.min_waveform_len(), cfg.stft_window + 3 * cfg.stft_hop)
    batch = {
        "text_tokens": rng.integers(1, cfg.vocab_size, size=(B, L)),
        "waveform": rng.standard_normal((B, wav_len)),
        "frames": rng.standard_normal((B, cfg.clip_len) + cfg.frame_size),
        "user_tokens": rng.integers(1, cfg.vocab_size, size=(B, L)),
        "comment_tokens": rng.integers(1, cfg.vocab_size, size=(B, L)),
    }
    labels = rng.integers(0, 2, size=B).tolist()
    return batch, labels


def cmd_gradcheck(args) -> int:
    cfg = _load_config_arg(args.config) if args.config else minimal_config()
    rng = np.random.default_rng(args.seed)
    model = FusionModel(cfg)
    batch, labels = _gradcheck_batch(cfg, rng)

    def f():
        return cross_entropy_batch(model.forward_batch(batch, train=False),
                                   labels)

    names = [n for n, _ in model.params.named()]
    report = grad_check(f, [model.params[n] for n in names])
    result = {
        "max_abs_err": report.max_abs_err,
        "max_rel_err": report.max_rel_err,
        "worst_param": report.worst_param,
        "threshold": GRADCHECK_THRESHOLD,
        "n_parameters": int(sum(model.params[n].data.size for n in names)),
        "config_hash": cfg.hash(),
    }
    if args.out:
        _write_json(Path(args.out), result)
    print(f"max_rel_err {report.max_rel_err:.3e} (worst {report.worst_param})")
    if report.max_rel_err >= GRADCHECK_THRESHOLD:
        print("gradient check FAILED", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_plan_flags(p):
    p.add_argument("--plan", help="experiment plan as a single JSON file")
    p.add_argument("--corpus", help="corpus file (overridden by the plan)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seeds", type=int, nargs="+", default=None)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=0.01)


def build_parser() -> _Parser:
    parser = _Parser(prog="mmfusion",
                     description="multimodal misinformation detection experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--n-samples", type=int, default=2000)
    g.add_argument("--n-topics", type=int, default=4)
    g.add_argument("--noise-level", type=float, default=0.0)
    g.add_argument("--fake-fraction", type=float, default=0.5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--social-signal", action="store_true")
    g.add_argument("--decoy-tone", action=argparse.BooleanOptionalAction,
                   default=True)
    g.set_defaults(fn=cmd_gen)

    t = sub.add_parser("train", help="train a model on a corpus")
    t.add_argument("--corpus", required=True)
    t.add_argument("--config", help="model config JSON file (default config if omitted)")
    t.add_argument("--out", required=True, help="checkpoint output path")
    t.add_argument("--history", help="training history JSON output path")
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--batch-size", type=int, default=64)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--weight-decay", type=float, default=0.01)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--verbose", action="store_true")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--corpus", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", choices=("train", "val", "test", "all"),
                   default="test")
    e.add_argument("--out", help="JSON report path")
    e.set_defaults(fn=cmd_eval)

    a = sub.add_parser("ablate", help="modality-combination ablation")
    _add_plan_flags(a)
    a.set_defaults(fn=cmd_ablate)

    c = sub.add_parser("compare-audio", help="vgg vs w2v audio encoder arms")
    _add_plan_flags(c)
    c.set_defaults(fn=cmd_compare_audio)

    m = sub.add_parser("misalign", help="audio misalignment sweep")
    _add_plan_flags(m)
    m.add_argument("--shifts", type=int, nargs="+", default=None)
    m.set_defaults(fn=cmd_misalign)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient check")
    gc.add_argument("--config", help="model config JSON (minimal config if omitted)")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--out", help="JSON report path")
    gc.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except PlanError as e:
        print(f"plan error: {e}", file=sys.stderr)
        return EXIT_PLAN
    except (InputError, T.ShapeError, T.DomainError, ValueError) as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_PLAN
    except TrainingDiverged as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
