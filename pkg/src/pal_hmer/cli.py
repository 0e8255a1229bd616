"""Command-line entry point: ``pal-hmer {synth,train,eval,predict,render}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical abort during training.
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .config import Config, load_config
from .errors import ConfigError, ContractError, DataError, NumericalError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad arguments; route it to our usage code instead
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def build_parser():
    p = _Parser(prog="pal-hmer", description="Paired adversarial handwritten math recognition.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic paired corpus")
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--depth", type=int, default=2)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--height", type=int, default=64)
    s.add_argument("--width", type=int, default=256)
    s.add_argument("--holdout", type=int, default=0, help="mark the last N samples as split 'test'")
    s.add_argument("--val", type=int, default=0, help="mark N samples before the holdout as split 'val'")

    t = sub.add_parser("train", help="train a recognizer")
    src = t.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="dataset directory written by 'synth'")
    src.add_argument("--synthetic", action="store_true", help="generate the corpus in memory")
    t.add_argument("--config", help="key = value config file")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--count", type=int, default=300, help="with --synthetic: corpus size")
    t.add_argument("--depth", type=int, default=2, help="with --synthetic: grammar depth")
    t.add_argument("--data-seed", type=int, default=7, help="with --synthetic: corpus seed")
    t.add_argument("--quiet", action="store_true")

    e = sub.add_parser("eval", help="exprate of a checkpoint on a dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--beam", type=int, default=10)
    e.add_argument("--max-len", type=int, default=64)
    e.add_argument("--split", default=None, help="only evaluate rows of this split")
    e.add_argument("--out", default=None, help="per-sample CSV (default: <ckpt>.eval.csv)")

    r = sub.add_parser("predict", help="recognize a single PGM image")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--image", required=True)
    r.add_argument("--beam", type=int, default=10)
    r.add_argument("--max-len", type=int, default=64)

    d = sub.add_parser("render", help="render a LaTeX label as a printed template")
    d.add_argument("--label", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--height", type=int, default=64)
    d.add_argument("--width", type=int, default=256)
    return p


def cmd_synth(args):
    from .data.pairs import save_dataset
    from .data.synth import synth_generate

    if args.count < 1:
        raise UsageError("--count must be >= 1")
    if args.holdout + args.val >= args.count:
        raise UsageError("--holdout plus --val must leave some training samples")
    samples = synth_generate(args.depth, args.count, args.seed, args.height, args.width)
    n_train = args.count - args.holdout - args.val
    splits = ["train"] * n_train + ["val"] * args.val + ["test"] * args.holdout
    save_dataset(samples, args.out, splits)
    print(f"wrote {len(samples)} samples to {args.out}")
    return EXIT_OK


def _metrics_path(ckpt):
    ckpt = Path(ckpt)
    return ckpt.with_name(ckpt.name + ".metrics.csv")


def cmd_train(args):
    from .adversarial import train
    from .data.pairs import load_dataset
    from .data.synth import synth_generate, synth_vocabulary
    from .model import save_checkpoint

    config = load_config(args.config) if args.config else Config()
    mc = config.model
    val = None
    if args.synthetic:
        vocab = synth_vocabulary()
        samples = synth_generate(args.depth, args.count, args.data_seed, mc.image_height, mc.image_width)
    else:
        samples, vocab = load_dataset(args.data, split="train")
        val, _ = load_dataset(args.data, vocab=vocab, split="val")
        if not samples:
            raise DataError(f"{args.data}: no training samples")
        shape = samples[0].a_h.shape
        if shape != (mc.image_height, mc.image_width):
            raise DataError(f"{args.data}: images are {shape[0]}x{shape[1]} but the config expects "
                            f"{mc.image_height}x{mc.image_width}")

    def report(epoch, row):
        if not args.quiet:
            val_txt = "" if np.isnan(row["val_exprate"]) else f" val_exprate {row['val_exprate']:.3f}"
            print(f"epoch {epoch} iter {row['iter']} P_R {row['P_R']:.4f} disc_acc {row['disc_acc']:.3f}{val_txt}",
                  flush=True)

    result = train(samples, config, len(vocab), val_set=val or None, metrics_path=_metrics_path(args.out),
                   on_epoch=report)
    save_checkpoint(args.out, config, vocab, result.recognizer, result.discriminator)
    print(f"stopped: {result.stop_reason} after {len(result.history)} iterations; checkpoint {args.out}")
    return EXIT_OK


def cmd_eval(args):
    from .data.pairs import load_dataset
    from .inference import evaluate
    from .model import load_checkpoint

    config, vocab, recognizer, _ = load_checkpoint(args.ckpt)
    samples, _ = load_dataset(args.data, vocab=vocab, split=args.split)
    if not samples:
        raise DataError(f"{args.data}: dataset is empty")
    report = evaluate(recognizer, samples, beam=args.beam, max_len=args.max_len, vocab=vocab)
    out = Path(args.out) if args.out else Path(str(args.ckpt) + ".eval.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "prediction", "reference", "exact_match"])
        for r in report.records:
            w.writerow([r.id, r.prediction, r.reference, int(r.exact_match)])
    print(report)
    return EXIT_OK


def cmd_predict(args):
    from .data.pgm import read_pgm
    from .inference import decode
    from .model import load_checkpoint

    config, vocab, recognizer, _ = load_checkpoint(args.ckpt)
    image = read_pgm(args.image)
    want = (config.model.image_height, config.model.image_width)
    if image.shape != want:
        raise DataError(f"{args.image}: image is {image.shape[0]}x{image.shape[1]}, checkpoint expects {want[0]}x{want[1]}")
    hyp = decode(recognizer, image, beam=args.beam, max_len=args.max_len)
    print(" ".join(vocab.decode(hyp.tokens)))
    return EXIT_OK


def cmd_render(args):
    from .data.layout import render_printed
    from .data.pgm import write_pgm
    from .data.vocab import split_latex

    tokens = split_latex(args.label)
    if not tokens:
        raise DataError("empty label")
    write_pgm(args.out, render_printed(tokens, args.height, args.width))
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict, "render": cmd_render}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ContractError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
