"""Command-line surface: train, tag, eval, bench, and sweep.

Exit codes: 0 success, 1 internal error, 2 usage or input error,
3 training divergence. Hyperparameters come from the config file; flags
carry only paths, the seed override, and verbosity. Every training or
benchmark run echoes its fully resolved configuration into the output
directory.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .bench import bench
from .config import TrainConfig, format_config, load_config
from .data import (
    ConllParseError,
    LabelScheme,
    Vocabulary,
    build_sequences,
    collect_label_strings,
    collect_normalized_words,
    load_embeddings,
    looks_like_iob,
    maybe_iob_to_bilou,
    read_conll,
)
from .evaluation import extract_segments, micro_f1
from .model import load_model, save_model
from .tensor import UsageError
from .training import DivergenceError, train

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_DIVERGED = 3


def _require_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"file not found: {path}")
    return p


def _prepare_training_data(cfg: TrainConfig, train_path, dev_path, emb_path=None):
    train_docs = read_conll(_require_file(train_path))
    dev_docs = read_conll(_require_file(dev_path)) if dev_path else []
    labels = collect_label_strings(train_docs) + collect_label_strings(dev_docs)
    scheme = LabelScheme.from_labels(
        maybe_iob_to_bilou(sorted(set(labels))) if looks_like_iob(labels) else labels
    )
    words = collect_normalized_words(train_docs)
    pretrained = None
    if emb_path:
        emb_words, emb_vecs = load_embeddings(_require_file(emb_path))
        words = words + emb_words
        pretrained = (emb_words, emb_vecs)
    vocab = Vocabulary.build(words)
    train_seqs = build_sequences(train_docs, vocab, scheme, context=cfg.context)
    dev_seqs = build_sequences(dev_docs, vocab, scheme, context=cfg.context)
    return vocab, scheme, train_seqs, dev_seqs, pretrained


def cmd_train(args) -> int:
    cfg = load_config(_require_file(args.config))
    if args.seed is not None:
        cfg.seed = args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vocab, scheme, train_seqs, dev_seqs, pretrained = _prepare_training_data(
        cfg, args.train, args.dev, args.embeddings
    )
    if not train_seqs:
        raise UsageError(f"no training sequences in {args.train}")
    (out / "config.resolved").write_text(format_config(cfg), encoding="utf-8")

    try:
        result = train(cfg, train_seqs, dev_seqs or None, vocab, scheme,
                       pretrained=pretrained, metrics_path=out / "metrics.tsv",
                       quiet=not args.verbose)
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    save_model(result.model, out / "model.bin")
    if result.best_epoch >= 0 and dev_seqs:
        print(f"best dev F1 {100 * result.best_dev_f1:.2f} at epoch {result.best_epoch}")
    print(f"wrote {out / 'model.bin'}")
    return EXIT_OK


def _emit_tagged(input_path, output_path, labels_by_sentence) -> None:
    """Re-emit the input file with a predicted label appended to token lines."""
    it = iter(labels_by_sentence)
    current: list[str] | None = None
    with open(input_path, encoding="utf-8") as src, \
            open(output_path, "w", encoding="utf-8") as dst:
        for raw in src:
            line = raw.rstrip("\n")
            if not line.strip():
                current = None
                dst.write(line + "\n")
                continue
            if line.split()[0] == "-DOCSTART-":
                current = None
                dst.write(line + "\n")
                continue
            if current is None or not current:
                current = list(next(it))
            dst.write(f"{line} {current.pop(0)}\n")


def cmd_tag(args) -> int:
    model = load_model(_require_file(args.model))
    docs = read_conll(_require_file(args.input))
    for _, sentences in docs:
        for sent in sentences:
            for _, label in sent:
                if label is not None and label != "O" and "-" in label:
                    typ = label.split("-", 1)[1]
                    if typ not in model.scheme.types:
                        raise UsageError(
                            f"input label type {typ!r} is not in the model's scheme "
                            f"(types {model.scheme.types})"
                        )
    # tagging works from surfaces alone; gold labels in the input are ignored
    seqs = build_sequences(docs, model.vocab, None, context="sentence")
    pred = model.tag(seqs, batch_size=32)
    labels = [
        [model.scheme.label_of(i) for i in row] for row in pred
    ]
    _emit_tagged(args.input, args.output, labels)
    print(f"wrote {args.output}")
    return EXIT_OK


def _read_label_file(path) -> list[list[str]]:
    docs = read_conll(_require_file(path))
    out = []
    for _, sentences in docs:
        for sent in sentences:
            labels = [lab if lab is not None else "O" for _, lab in sent]
            out.append(labels)
    return out


def cmd_eval(args) -> int:
    gold = _read_label_file(args.gold)
    pred = _read_label_file(args.pred)
    if len(gold) != len(pred):
        raise UsageError(
            f"gold has {len(gold)} sentences, predictions have {len(pred)}"
        )
    line = 0
    for i, (g, p) in enumerate(zip(gold, pred)):
        if len(g) != len(p):
            raise UsageError(
                f"sentence {i + 1} (starting near token line {line + 1}): "
                f"{len(g)} gold tokens vs {len(p)} predicted"
            )
        line += len(g)
    if looks_like_iob([l for sent in gold for l in sent]):
        gold = [maybe_iob_to_bilou(sent) for sent in gold]
    p, r, f1 = micro_f1(
        [extract_segments(sent) for sent in gold],
        [extract_segments(sent) for sent in pred],
    )
    print(f"P {100 * p:.2f} R {100 * r:.2f} F1 {100 * f1:.2f}")
    return EXIT_OK


def cmd_bench(args) -> int:
    models = {}
    for path in args.models:
        name = Path(path).stem
        models[name] = load_model(_require_file(path))
    docs = read_conll(_require_file(args.data))
    first = next(iter(models.values()))
    seqs = build_sequences(docs, first.vocab, None, context=args.context)
    batch_sizes = [int(b) for b in args.batch_sizes.split(",")]
    report = bench(models, seqs, batch_sizes, repeats=args.repeats,
                   baseline=args.baseline, max_batch_tokens=args.max_batch_tokens)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    settings = "\n".join([
        f"models = {','.join(sorted(models))}",
        f"baseline = {report.baseline}",
        f"batch_sizes = {args.batch_sizes}",
        f"repeats = {args.repeats}",
        f"context = {args.context}",
        f"max_batch_tokens = {args.max_batch_tokens}",
        f"data = {args.data}",
    ]) + "\n"
    (out / "config.resolved").write_text(settings, encoding="utf-8")
    for path in report.write(out, figures=not args.no_figures):
        print(f"wrote {path}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for config_path in args.configs:
        cfg = load_config(_require_file(config_path))
        if args.seed is not None:
            cfg.seed = args.seed
        name = Path(config_path).stem
        run_dir = out / name
        run_dir.mkdir(parents=True, exist_ok=True)
        vocab, scheme, train_seqs, dev_seqs, pretrained = _prepare_training_data(
            cfg, args.train, args.dev, args.embeddings
        )
        (run_dir / "config.resolved").write_text(format_config(cfg), encoding="utf-8")
        try:
            result = train(cfg, train_seqs, dev_seqs or None, vocab, scheme,
                           pretrained=pretrained,
                           metrics_path=run_dir / "metrics.tsv")
        except DivergenceError as exc:
            print(f"{name}: diverged ({exc})", file=sys.stderr)
            rows.append((name, float("nan"), -1))
            continue
        save_model(result.model, run_dir / "model.bin")
        rows.append((name, result.best_dev_f1, result.best_epoch))
    lines = ["config\tbest_dev_f1\tbest_epoch"]
    for name, f1, epoch in sorted(rows, key=lambda r: -r[1]):
        lines.append(f"{name}\t{100 * f1:.2f}\t{epoch}")
    (out / "sweep.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {out / 'sweep.tsv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dilated-tagger",
        description="Sequence labeling with iterated dilated convolutions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a tagger")
    p.add_argument("--config", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--dev", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--embeddings", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("tag", help="label a CoNLL file with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_tag)

    p = sub.add_parser("eval", help="segment-level micro-F1 of predictions")
    p.add_argument("gold")
    p.add_argument("pred")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="decode-throughput benchmark")
    p.add_argument("--models", nargs="+", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--batch-sizes", default="1,2,4,8,16,32")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--baseline", default=None)
    p.add_argument("--context", default="sentence", choices=["sentence", "document"])
    p.add_argument("--max-batch-tokens", type=int, default=2_000_000)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep", help="train and compare a list of configs")
    p.add_argument("--configs", nargs="+", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--embeddings", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConllParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
