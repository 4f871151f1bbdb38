"""``verbspace`` command line: synth, build-labels, split, train, eval, retrieve, run.

Settings come from built-in defaults, then ``--config`` (flat ``key = value``
file), then command-line flags.  ``VERBSPACE_OUT`` sets the default output
directory.  The exit status is nonzero whenever any error was raised.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .errors import VerbspaceError
from .pipeline import (
    cmd_build_labels,
    cmd_eval,
    cmd_retrieve,
    cmd_run,
    cmd_split,
    cmd_synth,
    cmd_train,
    load_config,
)

log = logging.getLogger("verbspace")


def _csv(kind):
    def parse(text):
        return tuple(kind(x) for x in text.split(",") if x.strip())
    return parse


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (default $VERBSPACE_OUT or ./verbspace-out)")
    p.add_argument("--vocab", help="vocabulary file, one verb per line")
    p.add_argument("--votes", help="annotation vote file")
    p.add_argument("--features", help="feature file")
    p.add_argument("--folds-file", help="precomputed fold file")
    p.add_argument("--scheme", type=_csv(str), help="comma list of SL, ML, SAML")
    p.add_argument("--alpha", type=_csv(float), help="comma list of relevance thresholds")
    p.add_argument("--folds", type=int, help="number of cross-validation folds")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float, help="learning rate")
    p.add_argument("--momentum", type=float)
    p.add_argument("--hidden", type=_csv(int), help="comma list of hidden layer sizes")
    p.add_argument("--ml-threshold", type=float)
    p.add_argument("--ignore-unknown", action="store_true", default=None,
                   help="skip voted verbs missing from the vocabulary instead of failing")


def _config(args):
    return load_config(
        args.config,
        seed=args.seed, out=args.out, vocab=args.vocab, votes=args.votes, features=args.features,
        folds_file=args.folds_file, schemes=args.scheme, alphas=args.alpha, fold_count=args.folds,
        epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
        momentum=args.momentum, hidden=args.hidden, ml_threshold=args.ml_threshold,
        ignore_unknown=args.ignore_unknown,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="verbspace", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset from a JSON spec")
    p.add_argument("spec")
    p.add_argument("--out")

    p = sub.add_parser("build-labels", help="write SL/ML/SAML label files from votes")
    _add_common(p)

    p = sub.add_parser("split", help="write stratified cross-validation folds")
    _add_common(p)

    p = sub.add_parser("train", help="train one model")
    _add_common(p)
    p.add_argument("--fold", type=int, help="hold this fold out of training")

    p = sub.add_parser("eval", help="evaluate a trained model")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--fold", type=int, help="evaluate only this held-out fold")

    p = sub.add_parser("retrieve", help="rank verbs or videos for a single query")
    p.add_argument("--model", required=True)
    p.add_argument("--mode", choices=("v2t", "t2v", "v2v"), required=True)
    p.add_argument("--query", required=True, help="video id (v2t, v2v) or comma list of verbs (t2v)")
    p.add_argument("--features", action="append", required=True, help="corpus feature file (repeatable)")
    p.add_argument("--vocab", required=True)
    p.add_argument("--cross-dataset", action="store_true",
                   help="v2v: drop corpus videos sharing the query's dataset tag")
    p.add_argument("--out", help="output file")

    p = sub.add_parser("run", help="cross-validated train and evaluate for every scheme")
    _add_common(p)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "synth":
            paths = cmd_synth(args.spec, args.out)
            written = list(paths.values())
        elif args.command == "retrieve":
            written = [cmd_retrieve(args.model, args.mode, args.query, args.features, args.vocab,
                                    out_path=args.out, cross_dataset=args.cross_dataset)]
        else:
            config = _config(args)
            if args.command == "build-labels":
                written = list(cmd_build_labels(config).values())
            elif args.command == "split":
                written = [cmd_split(config)]
            elif args.command == "train":
                written = [cmd_train(config, fold=args.fold)]
            elif args.command == "eval":
                written = list(cmd_eval(config, args.model, fold=args.fold).values())
            else:
                cmd_run(config)
                written = [config.out_dir / "manifest.json", config.out_dir / "report.txt"]
    except (VerbspaceError, OSError) as exc:
        print(f"verbspace {args.command}: error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
