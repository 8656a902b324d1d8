"""kddnet command line: preprocess, tune, train, evaluate, report."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import __version__, pipeline
from .config import ConfigError, load_config
from .dataset import ParseError, UnknownAttackName
from .nn import CheckpointError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("kddnet")


def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted before or after the subcommand
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", type=Path, help="run configuration (YAML)")
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--out", type=Path, help="override the output directory")
    common.add_argument("--threads", type=int,
                        help="BLAS threads (default: $KDDNET_THREADS, else library default)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="kddnet", description=__doc__, parents=[common])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("preprocess", parents=[common],
                   help="parse, split and encode the dataset")
    sub.add_parser("tune", parents=[common], help="squirrel-search hyperparameter tuning")
    sub.add_parser("train", parents=[common], help="train the classifier")
    ev = sub.add_parser("evaluate", parents=[common], help="score the held-out split")
    ev.add_argument("--checkpoint", type=Path, help="checkpoint (default: <out>/train/model.ckpt)")
    rep = sub.add_parser("report", parents=[common], help="verify a run directory")
    rep.add_argument("run_dir", nargs="?", type=Path, help="run directory (default: --out)")
    sub.add_parser("run", parents=[common], help="preprocess, tune if requested, train, evaluate")
    return parser


def _run(args) -> int:
    overrides = {"seed": args.seed, "threads": args.threads,
                 "output": str(args.out.resolve()) if args.out else None}
    if args.command == "report":
        out = args.run_dir or args.out
        if out is None:
            out = load_config(args.config, overrides).output
        problems = pipeline.verify(Path(out))
        if problems:
            for p in problems:
                print(f"FAIL {p}", file=sys.stderr)
            return EXIT_RUNTIME
        print(pipeline.report_text(Path(out)))
        print("all artifacts verified")
        return EXIT_OK

    cfg = load_config(args.config, overrides)
    with threadpool_limits(limits=cfg.threads):
        if args.command == "preprocess":
            pipeline.preprocess(cfg)
        elif args.command == "tune":
            pipeline.tune(cfg)
        elif args.command == "train":
            pipeline.train(cfg)
        elif args.command == "evaluate":
            print(pipeline.format_summary(pipeline.evaluate(cfg, args.checkpoint)))
        elif args.command == "run":
            print(pipeline.format_summary(pipeline.run_all(cfg)))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for name in ("config", "seed", "out", "threads", "checkpoint", "run_dir"):
        if not hasattr(args, name):
            setattr(args, name, None)
    args.verbose = getattr(args, "verbose", False)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return _run(args)
    except (ConfigError, ParseError, UnknownAttackName) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (pipeline.StageError, CheckpointError, RuntimeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
