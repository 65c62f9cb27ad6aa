"""Command-line entry point: ``vete <subcommand> ...``.

Exit codes: 0 success, 1 usage/configuration error, 2 data or format error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import corpus
from .errors import ConfigError, DataError, NumericalError, VeteError
from .evaluation import (
    build_binary_pair_set,
    evaluate,
    read_binary_pairs,
    read_eval_dataset,
    read_sts,
    write_binary_pairs,
)
from .export import EXPORT_FORMATS, export_embeddings
from .optim import TrainingSet, check_model_gradients, read_checkpoint, train, write_checkpoint
from .search import (
    KNOWN_FIELDS,
    ablation_study,
    hyperparams_from_values,
    parse_value,
    random_search,
    read_ranges,
)
from .synthetic import SyntheticSpec, generate_synthetic_dataset

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

TRAIN_DEFAULTS = {"learning_rate": 1e-3, "batch_size": 32, "init_scale": 0.1,
                  "encoder": "BOW_SUM"}

log = logging.getLogger("vete")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _csv(text):
    return [part for part in text.split(",") if part]


def _add_train_flags(p):
    g = p.add_argument_group("hyperparameters (override --config)")
    g.add_argument("--config", help="file of key=value lines (HyperParams field names)")
    g.add_argument("--encoder", choices=["BOW_SUM", "BOW_MEAN", "RNN_GRU", "RNN_LSTM", "CNN"],
                   type=str.upper)
    g.add_argument("--hidden", type=int)
    g.add_argument("--layers", type=int)
    g.add_argument("--normalize", dest="normalize_output", action="store_const", const=True)
    g.add_argument("--loss", choices=["PEARSON", "COVARIANCE", "SKT", "RANK"], type=str.upper)
    g.add_argument("--skt-alpha", dest="skt_alpha", type=float)
    g.add_argument("--rank-margin", dest="rank_margin", type=float)
    g.add_argument("--dim", dest="embedding_dim", type=int)
    g.add_argument("--batch-size", dest="batch_size", type=int)
    g.add_argument("--lr", dest="learning_rate", type=float)
    g.add_argument("--lr-decay", dest="lr_decay", type=float)
    g.add_argument("--init-scale", dest="init_scale", type=float)
    g.add_argument("--epochs", type=int)
    g.add_argument("--level", dest="training_level", choices=["SENTENCE", "WORD"],
                   type=str.upper)
    g.add_argument("--min-count", dest="min_count", type=int)
    g.add_argument("--clip-norm", dest="clip_norm", type=float)


def build_parser():
    parser = _Parser(prog="vete", description="Visually enhanced text embeddings toolkit.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--seed", type=int, default=0, help="master seed for all randomness")
        return p

    p = add("prep", "filter to one caption per image, split, and build the vocabulary")
    p.add_argument("--captions", required=True)
    p.add_argument("--features", help="feature file; checked to cover every image id")
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--split", default="0.8,0.1,0.1")
    p.add_argument("--binary-pairs", type=int, default=0,
                   help="also sample N related + N unrelated pairs from the multi-caption test split")
    p.add_argument("--out", required=True, help="output directory")

    p = add("train", "train a model on captions + image features")
    p.add_argument("--captions", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--val", type=_csv, default=[], help="comma-separated STS/binary files")
    p.add_argument("--checkpoint-out", required=True)
    p.add_argument("--checkpoint-in", help="initialize from this checkpoint")
    p.add_argument("--log", help="per-epoch training log (default: stderr)")
    _add_train_flags(p)

    p = add("eval", "score a checkpoint on STS and binary pair files")
    p.add_argument("--model", required=True)
    p.add_argument("--sts", type=_csv, default=[])
    p.add_argument("--binary", type=_csv, default=[])
    p.add_argument("--report", help="TSV report path (default: stdout only)")

    for name, text in (("search", "random hyperparameter search"),
                       ("ablate", "paired ablation of one hyperparameter")):
        p = add(name, text)
        p.add_argument("--ranges", required=True)
        p.add_argument("--train", required=True, help="training captions file")
        p.add_argument("--features", required=True)
        p.add_argument("--val", type=_csv, required=True)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--report", help="TSV report path")
        if name == "search":
            p.add_argument("--trials", type=int, default=100)
            p.add_argument("--test", type=_csv, default=[])
            p.add_argument("--checkpoint-out", help="save the selected model")
        else:
            p.add_argument("--param", required=True)
            p.add_argument("--values", type=_csv, required=True)
            p.add_argument("--sets", type=int, default=100)

    p = add("export", "export embeddings as text")
    p.add_argument("--model", required=True)
    p.add_argument("--format", choices=EXPORT_FORMATS, default="word_vectors_text")
    p.add_argument("--sentences", help="one sentence per line (sentence_vectors_tsv)")
    p.add_argument("--out", required=True)

    p = add("synth", "generate a synthetic benchmark")
    p.add_argument("--vocab", type=int, default=50)
    p.add_argument("--concepts", type=int, default=8)
    p.add_argument("--examples", type=int, default=2000)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--min-len", type=int, default=4)
    p.add_argument("--max-len", type=int, default=8)
    p.add_argument("--sts-pairs", type=int, default=500)
    p.add_argument("--binary-pairs", type=int, default=500)
    p.add_argument("--out", required=True)

    p = add("check-grads", "finite-difference check over the encoder x loss grid")
    p.add_argument("--instances", type=int, default=5)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    return parser


def _read_config(path):
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in KNOWN_FIELDS:
            raise ConfigError(f"{path}:{lineno}: expected key=value with a known key")
        try:
            values[key] = parse_value(key, value.strip())
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from None
    return values


def hyperparams_from_args(args):
    values = dict(TRAIN_DEFAULTS)
    if args.config:
        values.update(_read_config(args.config))
    for key in KNOWN_FIELDS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return hyperparams_from_values(values, args.seed)


def _load_training_set(captions, features):
    return TrainingSet(corpus.read_captions(captions), corpus.load_image_features(features))


def cmd_prep(args):
    fractions = [float(x) for x in _csv(args.split)]
    if len(fractions) != 3:
        raise ConfigError("--split needs three comma-separated fractions")
    try:
        spec = corpus.SplitSpec(*fractions, seed=args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    records = corpus.read_captions(args.captions)
    if args.features:
        table = corpus.load_image_features(args.features)
        missing = [r.image_id for r in records if r.image_id not in table]
        if missing:
            raise DataError(f"no image feature for image_id {missing[0]!r}")
    unique = corpus.filter_one_caption_per_image(records)
    train_recs, val_recs, test_recs = corpus.split_dataset(unique, spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, recs in (("train", train_recs), ("validation", val_recs), ("test", test_recs)):
        corpus.write_captions(recs, out / f"{name}.tsv")
    vocab = corpus.build_vocabulary([corpus.tokenize(r.caption) for r in train_recs],
                                    args.min_count)
    (out / "vocab.txt").write_text("\n".join(vocab.id_to_token) + "\n", encoding="utf-8")
    if args.binary_pairs:
        test_ids = {r.image_id for r in test_recs}
        multi = [r for r in records if r.image_id in test_ids]
        pairs = build_binary_pair_set(multi, args.binary_pairs, args.binary_pairs, args.seed)
        write_binary_pairs(pairs, out / "test_binary.tsv")
    print(f"train={len(train_recs)} validation={len(val_recs)} test={len(test_recs)} "
          f"vocab={len(vocab)}")


def cmd_train(args):
    hyper = hyperparams_from_args(args)
    data = _load_training_set(args.captions, args.features)
    val = [read_eval_dataset(p) for p in args.val]
    init = read_checkpoint(args.checkpoint_in) if args.checkpoint_in else None
    log_fh = open(args.log, "w", encoding="utf-8") if args.log else sys.stderr
    try:
        model, history = train(hyper, data, val, init_model=init, log_stream=log_fh)
    finally:
        if args.log:
            log_fh.close()
    if not history.step_losses:
        raise NumericalError(f"no batch could be trained ({history.skipped_batches} skipped)")
    write_checkpoint(model, args.checkpoint_out)


def cmd_eval(args):
    model = read_checkpoint(args.model)
    datasets = [read_sts(p) for p in args.sts] + [read_binary_pairs(p) for p in args.binary]
    if not datasets:
        raise ConfigError("nothing to evaluate: pass --sts and/or --binary")
    report = evaluate(model, datasets)
    if args.report:
        report.write(args.report)
    sys.stdout.write(report.to_tsv())


def _search_inputs(args):
    return (read_ranges(args.ranges), _load_training_set(args.train, args.features),
            [read_eval_dataset(p) for p in args.val])


def cmd_search(args):
    ranges, data, val = _search_inputs(args)
    test = [read_eval_dataset(p) for p in args.test]
    report = random_search(ranges, args.trials, data, val, master_seed=args.seed,
                           test_datasets=test, workers=args.workers)
    text = report.to_tsv()
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
    if args.checkpoint_out:
        write_checkpoint(report.best_model, args.checkpoint_out)
    sys.stdout.write(text)


def cmd_ablate(args):
    ranges, data, val = _search_inputs(args)
    values = [parse_value(args.param, v) for v in args.values]
    report = ablation_study(ranges, args.param, values, args.sets, data, val,
                            master_seed=args.seed, workers=args.workers)
    text = report.to_tsv()
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def cmd_export(args):
    model = read_checkpoint(args.model)
    sentences = None
    if args.format == "sentence_vectors_tsv":
        if not args.sentences:
            raise ConfigError("--sentences is required for sentence_vectors_tsv")
        sentences = [line for line in
                     Path(args.sentences).read_text(encoding="utf-8").splitlines() if line]
    export_embeddings(model, args.format, args.out, sentences)


def cmd_synth(args):
    spec = SyntheticSpec(vocab_size=args.vocab, concepts=args.concepts,
                         caption_length=(args.min_len, args.max_len), n_examples=args.examples,
                         feature_dim=args.feature_dim, noise_sigma=args.noise, seed=args.seed,
                         n_sts=args.sts_pairs, n_binary=args.binary_pairs)
    for path in generate_synthetic_dataset(spec, args.out).values():
        print(path)


def cmd_check_grads(args):
    from .contrastive import LossSpec
    from .encoders import ENCODER_KINDS

    losses = [LossSpec("PEARSON"), LossSpec("COVARIANCE"), LossSpec("SKT", alpha=1.0),
              LossSpec("RANK", gamma=0.2)]
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for kind in ENCODER_KINDS:
        for loss in losses:
            err = max(check_model_gradients(kind, loss, rng, h=args.h)
                      for _ in range(args.instances))
            worst = max(worst, err)
            status = "ok" if err < args.tol else "FAIL"
            print(f"{kind}\t{loss.kind}\t{err:.3e}\t{status}")
    if worst >= args.tol:
        raise NumericalError(f"max relative gradient error {worst:.3e} >= {args.tol:g}")


COMMANDS = {"prep": cmd_prep, "train": cmd_train, "eval": cmd_eval, "search": cmd_search,
            "ablate": cmd_ablate, "export": cmd_export, "synth": cmd_synth,
            "check-grads": cmd_check_grads}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"vete {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"vete {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"vete {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except VeteError as exc:
        print(f"vete {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
