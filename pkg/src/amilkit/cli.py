"""Command-line entry point: pipeline stages as subcommands."""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import pipeline
from .config import dump_default, load_config
from .model import ARCHS


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration file")
    p.add_argument("--workdir", help="artifact directory "
                   "(default: config, then $AMILKIT_WORKDIR, then cwd)")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)


def _add_modeling(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=["pair", "type"])
    p.add_argument("--arch", choices=ARCHS)
    p.add_argument("--bag-size", type=int, dest="bag_size")
    p.add_argument("--p-at", dest="p_at",
                   help="comma-separated precision cutoffs, e.g. 10,50,100")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="amilkit",
        description="Distantly supervised relation extraction with "
                    "abstractified multi-instance bags.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("synth", "generate a synthetic KG + corpus fixture"),
        ("preprocess", "segment, match, align, sample negatives, split"),
        ("bag", "group instances into fixed-size bags"),
        ("train", "train the encoder + classifier"),
        ("eval", "evaluate a trained checkpoint on the test split"),
        ("report", "rewrite report files from saved predictions"),
        ("ablate", "train + evaluate all architectures A..Q"),
        ("init-config", "write the default configuration file"),
    ]:
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name in ("bag", "train", "eval", "report", "ablate"):
            _add_modeling(p)
        if name == "init-config":
            p.add_argument("--out", default="amilkit.json")
    return parser


def _config_from_args(args: argparse.Namespace):
    overrides = {}
    for key in ("workdir", "seed", "workers", "mode", "arch", "bag_size"):
        if getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    if getattr(args, "p_at", None) is not None:
        overrides["p_at"] = [int(k) for k in args.p_at.split(",")]
    return load_config(args.config, overrides)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "init-config":
            dump_default(args.out)
            return 0
        cfg = _config_from_args(args)
        os.makedirs(cfg.workdir, exist_ok=True)
        if args.command == "synth":
            pipeline.run_synth(cfg)
        elif args.command == "preprocess":
            pipeline.preprocess(cfg)
        elif args.command == "bag":
            pipeline.run_bag(cfg)
        elif args.command == "train":
            pipeline.run_train(cfg)
        elif args.command == "eval":
            pipeline.run_eval(cfg)
        elif args.command == "report":
            pipeline.run_report(cfg)
        elif args.command == "ablate":
            pipeline.run_ablate(cfg)
        return 0
    except Exception as e:  # machine-readable error on stderr
        print(json.dumps({"error": type(e).__name__, "message": str(e)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
