"""Command-line interface.

    s2t <command> --config <path> [--seed N] [--out DIR]

Commands: generate-synthetic, train-detector, train-captioners, detect,
caption, evaluate, stats, ablate-prompt. The config file is one flat JSON
object of dot-namespaced keys; S2T_DATA_DIR overrides the configured data
root. Exit codes: 0 ok, 2 config error, 3 data error.
"""

from __future__ import annotations

import argparse
import sys

from .errors import (
    AnnotationSyntaxError,
    ConfigError,
    DegenerateCorpus,
    EmptyCorpus,
    GenerationError,
    GrammarError,
    InvariantError,
    SchemaError,
    ShapeError,
    TooFewMatches,
    UnknownCommand,
    UnknownShotType,
)
from .experiments import COMMANDS, load_config, run_experiment

_CONFIG_ERRORS = (ConfigError, UnknownCommand)
_DATA_ERRORS = (
    AnnotationSyntaxError, SchemaError, InvariantError, GrammarError,
    TooFewMatches, UnknownShotType, GenerationError, DegenerateCorpus,
    EmptyCorpus, ShapeError, FileNotFoundError,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="s2t",
        description="Tactic-unit detection and dual-scale badminton captioning.")
    sub = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        cmd = sub.add_parser(command)
        cmd.add_argument("--config", default=None, help="flat JSON config file")
        cmd.add_argument("--seed", type=int, default=None,
                         help="override the configured seed")
        cmd.add_argument("--out", default="runs/latest", help="output directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        manifest = run_experiment(args.command, config, args.out, seed=args.seed)
    except _CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    for name, path in manifest.outputs.items():
        print(f"{name}: {path}")
    for name, path in manifest.checkpoints.items():
        print(f"checkpoint {name}: {path}")
    print(f"manifest: {args.out}/manifest.json")
    return 0


if __name__ == "__main__":
    sys.exit(main())
