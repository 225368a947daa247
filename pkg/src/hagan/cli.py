"""Command-line entry point: ``hagan <subcommand> ...``.

Exit codes: 0 success, 1 data/validation error, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import analysis, corpus as corpus_mod, trainer
from .errors import HaganError

CKPT_NAME = "checkpoint.txt"
LOG_NAME = "train_log.tsv"
ATTENTION_NAME = "attention.tsv"


def _corpus_files(directory):
    d = Path(directory)
    return d / "source.tsv", d / "target.tsv"


def _load_corpus(directory, config):
    src, tgt = _corpus_files(directory)
    return corpus_mod.load_corpus(src, tgt, config.vocab_limit, config.test_fraction)


def _load_run(run_dir):
    path = Path(run_dir)
    if path.is_dir():
        path = path / CKPT_NAME
    return trainer.load_checkpoint(path)


def _write(text, out):
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def cmd_gen_synth(args):
    cfg = corpus_mod.SynthConfig(
        source_labeled=args.source_labeled, source_test=args.source_test,
        source_unlabeled=args.unlabeled, target_unlabeled=args.unlabeled,
        target_test=args.target_test, label_noise=args.label_noise, seed=args.seed)
    corpus, roles = corpus_mod.generate_synthetic(cfg)
    out = Path(args.out)
    corpus_mod.save_corpus(corpus, out)
    corpus_mod.write_roles(roles, out / "roles.tsv")
    return 0


def _train_config(args):
    cfg = trainer.TrainConfig(
        lambda_D=args.lambda_d, lambda_G1=args.lambda_g1, lambda_G2=args.lambda_g2,
        embed_dim=args.embed_dim, word_hidden=args.word_hidden, sent_hidden=args.sent_hidden,
        disc_widths=tuple(int(w) for w in args.disc_widths.split(",") if w),
        batch_size=args.batch_size, learning_rate=args.lr, epochs=args.epochs,
        disc_steps=args.disc_steps, gen_steps=args.gen_steps, keep_prob=args.keep_prob,
        seed=args.seed, vocab_limit=args.vocab_limit, test_fraction=args.test_fraction,
        check_freezing=args.check_freezing)
    return cfg.naive() if args.naive else cfg


def cmd_train(args):
    config = _train_config(args)
    corpus = _load_corpus(args.corpus, config)
    model = trainer.build_model(config, len(corpus.vocab))
    result = trainer.train(model, corpus, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(trainer.format_log(result.log), out / LOG_NAME)
    trainer.save_checkpoint(out / CKPT_NAME, model, config, result.state)
    return 0


def cmd_eval(args):
    model, config, _ = _load_run(args.run)
    corpus = _load_corpus(args.corpus, config)
    lines = ["split\taccuracy"]
    for name, docs in (("source_test", corpus.source_test), ("target_test", corpus.target_test)):
        if docs:
            lines.append(f"{name}\t{trainer.evaluate(model, docs):.6f}")
    _write("\n".join(lines) + "\n", args.out)
    return 0


def cmd_extract_attention(args):
    model, config, _ = _load_run(args.run)
    corpus = _load_corpus(args.corpus, config)
    view = corpus.training_view()
    docs = {"source": view.source_all, "target": view.target_unlabeled,
            "all": view.source_all + view.target_unlabeled}[args.docs]
    rows = analysis.attention_rows(model.generator, docs)
    out = args.out or Path(args.run) / ATTENTION_NAME
    analysis.write_attention(rows, out)
    return 0


def _score_table(run, min_count):
    path = Path(run)
    if path.is_dir():
        path = path / ATTENTION_NAME
    return analysis.WordScoreTable.from_rows(analysis.read_attention(path), min_count)


def cmd_pivots(args):
    han = _score_table(args.han, args.min_count)
    hagan = _score_table(args.hagan, args.min_count)
    report = analysis.classify_pivots(han, hagan, high=args.high, low=args.low)
    _write(report.to_tsv(), args.out)
    return 0


def cmd_export_repr(args):
    model, config, _ = _load_run(args.run)
    corpus = _load_corpus(args.corpus, config)
    view = corpus.training_view()
    docs = view.source_unlabeled + view.target_unlabeled or view.source_train + view.target_unlabeled
    proj = analysis.export_representations(model.generator, docs, seed=args.seed)
    _write(proj.to_tsv(), args.out)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="hagan", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    p = sub.add_parser("gen-synth", help="write a seeded synthetic cross-domain corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--source-labeled", type=int, default=400)
    p.add_argument("--source-test", type=int, default=100)
    p.add_argument("--unlabeled", type=int, default=400, help="unlabeled documents per domain")
    p.add_argument("--target-test", type=int, default=200)
    p.add_argument("--label-noise", type=float, default=0.0)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("train", help="alternating adversarial training")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--naive", action="store_true", help="zero all adversarial weights")
    p.add_argument("--lambda-d", type=float, default=1.0)
    p.add_argument("--lambda-g1", type=float, default=0.2)
    p.add_argument("--lambda-g2", type=float, default=0.02)
    p.add_argument("--embed-dim", type=int, default=16)
    p.add_argument("--word-hidden", type=int, default=16)
    p.add_argument("--sent-hidden", type=int, default=16)
    p.add_argument("--disc-widths", default="32,16")
    p.add_argument("--batch-size", type=int, default=20)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--disc-steps", type=int, default=1)
    p.add_argument("--gen-steps", type=int, default=1)
    p.add_argument("--keep-prob", type=float, default=0.75)
    p.add_argument("--vocab-limit", type=int, default=10000)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--check-freezing", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="source/target test accuracy of a trained run")
    p.add_argument("--run", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("extract-attention", help="dump per-word attention weights")
    p.add_argument("--run", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--docs", choices=("source", "target", "all"), default="all",
                   help="which training documents to encode")
    p.add_argument("--out", help=f"default: <run>/{ATTENTION_NAME}")
    p.set_defaults(func=cmd_extract_attention)

    p = sub.add_parser("pivots", help="classify pivots/non-pivots from two attention dumps")
    p.add_argument("--han", required=True, help="naive run dir or attention dump")
    p.add_argument("--hagan", required=True, help="adversarial run dir or attention dump")
    p.add_argument("--high", type=float, default=0.8)
    p.add_argument("--low", type=float, default=0.5)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_pivots)

    p = sub.add_parser("export-repr", help="2-D PCA projection of document representations")
    p.add_argument("--run", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_export_repr)
    return parser


def run_cli(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (HaganError, OSError) as exc:
        print(f"hagan {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
