"""Command-line entry point: ``synccap <command> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage error (bad flags,
missing or malformed input files). Data files are byte-stable for fixed
inputs; progress and timing go to standard error, the per-epoch training
lines go to standard output. Set ``SYNCCAP_LOG`` (e.g. ``DEBUG``) to change
log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import data as ds
from .checkpoint import CheckpointError, load_checkpoint
from .evaluate import build_report, caption_corpus, parse_metrics
from .metrics import DEFAULT_TAU, report_json
from .model import ModelConfig, SyncTransformer
from .trainer import TrainConfig, load_config_file, save_training, train, write_log
from . import viz

log = logging.getLogger("synccap")


class UsageError(Exception):
    """Bad flags or unusable input files (exit 2)."""


def _existing(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    return p


def _load_samples(path: str) -> list[ds.Sample]:
    try:
        return ds.load_jsonl(_existing(path, "data file"))
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _load_model(path: str):
    try:
        ck = load_checkpoint(_existing(path, "checkpoint"))
    except CheckpointError as exc:
        raise UsageError(str(exc)) from None
    return SyncTransformer(ck.config, ck.params), ck.vocab


# -- commands -----------------------------------------------------------------
def cmd_gen_data(args) -> int:
    if args.n < 0:
        raise UsageError("--n must be >= 0")
    try:
        samples = ds.generate_corpus(args.n, args.seed, args.min_prims, args.max_prims)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    ds.save_jsonl(samples, args.out)
    log.info("wrote %d samples to %s", len(samples), args.out)
    return 0


def cmd_train(args) -> int:
    samples = _load_samples(args.data)
    if not samples:
        raise UsageError(f"{args.data}: no samples")
    eval_samples = _load_samples(args.eval_data) if args.eval_data else None
    try:
        model_obj = load_config_file(_existing(args.model_config, "model config")) \
            if args.model_config else {}
        train_obj = load_config_file(_existing(args.train_config, "train config")) \
            if args.train_config else {}
        cfg = TrainConfig.from_json(train_obj)
        if args.epochs is not None:
            cfg.epochs = args.epochs
        vocab = ds.build_vocab([s.caption for s in samples])
        model_cfg = ModelConfig.from_json({**model_obj, "vocab_size": len(vocab)})
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad configuration: {exc}") from None
    resume = str(_existing(args.resume, "resume checkpoint")) if args.resume else None

    def on_epoch(entry):
        print(entry.line(), flush=True)
        log.info("epoch %d took %.2fs", entry.epoch, entry.seconds)

    result = train(samples, model_cfg, cfg, vocab, eval_samples, resume=resume, on_epoch=on_epoch)
    out = Path(args.ckpt_out)
    save_training(result, out)
    if result.best_params is not None:
        save_training(result, out.with_name(out.stem + ".best" + out.suffix), best=True)
    write_log(result.log, args.log or str(out) + ".log.jsonl")
    return 0


def cmd_eval(args) -> int:
    try:
        metrics = parse_metrics(args.metrics)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    samples = _load_samples(args.data)
    if not samples:
        raise UsageError(f"{args.data}: no samples")
    if "sync" in metrics and any(s.segments is None for s in samples):
        raise UsageError("sync metrics requested but the data has no segment annotations")
    if not 0 < args.tau <= 1:
        raise UsageError("--tau must be in (0, 1]")
    keywords = ds.load_keywords(_existing(args.keywords, "keyword table")) if args.keywords \
        else ds.KEYWORDS
    model, vocab = _load_model(args.ckpt)
    captions = caption_corpus(model, vocab, samples)
    report, sync = build_report(captions, samples, metrics, args.tau, keywords)
    text = report_json(report)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.words_csv and sync is not None:
        Path(args.words_csv).write_text(sync.words_csv(), encoding="utf-8")
    return 0


def _safe_name(sample_id: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in sample_id)


def cmd_caption(args) -> int:
    samples = _load_samples(args.input)
    model, vocab = _load_model(args.ckpt)
    captions = caption_corpus(model, vocab, samples)
    out_dir = None
    if args.emit_attention:
        out_dir = Path(args.emit_attention)
        out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for cap in captions:
        lines.append(json.dumps({"id": cap.id, "caption": cap.text}))
        if out_dir is not None:
            stem = _safe_name(cap.id)
            viz.write_attention_csv(out_dir / f"{stem}.attention.csv", cap.tokens,
                                    cap.attention.beta)
            viz.write_centers_csv(out_dir / f"{stem}.centers.csv", cap.tokens,
                                  cap.attention.centers, cap.attention.windows)
    text = "".join(line + "\n" for line in lines)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_viz(args) -> int:
    try:
        tokens, beta = viz.read_attention_csv(_existing(args.attention, "attention CSV"))
        if args.aggregate:
            spans = json.loads(_existing(args.aggregate, "span file").read_text(encoding="utf-8"))
            tokens, beta = viz.aggregate_rows(beta, tokens, spans)
        segments = viz.load_segments(_existing(args.segments, "segment file")) \
            if args.segments else None
        svg = viz.render_svg(beta, tokens, segments, viz.HeatmapSpec(tick_stride=args.tick_stride))
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(str(exc)) from None
    Path(args.svg).write_text(svg, encoding="utf-8")
    return 0


# -- parser -------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="synccap", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic motion/caption corpus as JSONL")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--min-prims", type=int, default=1)
    g.add_argument("--max-prims", type=int, default=3)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model and write checkpoints plus a JSONL log")
    t.add_argument("--data", required=True)
    t.add_argument("--model-config", help="JSON/TOML with ModelConfig fields (vocab_size is derived)")
    t.add_argument("--train-config", help="JSON/TOML with TrainConfig fields")
    t.add_argument("--ckpt-out", required=True)
    t.add_argument("--eval-data", help="held-out JSONL for best-BLEU checkpointing")
    t.add_argument("--epochs", type=int, help="override the configured number of epochs")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--log", help="JSONL log path (default: <ckpt-out>.log.jsonl)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="caption a corpus and report text and sync metrics")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--metrics", default="bleu,rouge,sync")
    e.add_argument("--tau", type=float, default=DEFAULT_TAU)
    e.add_argument("--keywords", help="JSON label -> motion word table")
    e.add_argument("--out", help="report path (default: stdout)")
    e.add_argument("--words-csv", help="per-word sync diagnostics CSV")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("caption", help="caption motions, optionally exporting attention CSVs")
    c.add_argument("--ckpt", required=True)
    c.add_argument("--input", required=True)
    c.add_argument("--emit-attention", metavar="DIR")
    c.add_argument("--out", help="captions JSONL path (default: stdout)")
    c.set_defaults(func=cmd_caption)

    v = sub.add_parser("viz", help="render an attention CSV as an SVG heatmap")
    v.add_argument("--attention", required=True)
    v.add_argument("--svg", required=True)
    v.add_argument("--segments", help="JSON list of {label, frame_span}")
    v.add_argument("--aggregate", metavar="SPANS_JSON", help="average rows over token spans")
    v.add_argument("--tick-stride", type=int, default=10)
    v.set_defaults(func=cmd_viz)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("SYNCCAP_LOG", "WARNING").upper(), stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        with threadpool_limits(1):
            return args.func(args)
    except UsageError as exc:
        print(f"synccap {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report any runtime failure as exit 1
        log.debug("failure", exc_info=True)
        print(f"synccap {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
