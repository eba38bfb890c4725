"""Command line entry point: ``statsol <experiment> --config FILE | --preset NAME``."""
from __future__ import annotations

import argparse
import json
import sys

from .errors import ConfigInvalidError, NonFiniteError
from .runner import EXPERIMENTS, load_preset, parse_config, preset_names, run_experiment

EXIT_CONFIG = 2
EXIT_NONFINITE = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="statsol", description="Run a statistical-solution study.")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run a {name} study")
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", metavar="PATH", help="JSON experiment config")
        src.add_argument("--preset", metavar="NAME", help=f"shipped preset ({', '.join(preset_names())})")
        p.add_argument("--seed", type=int, metavar="U64", help="override the master seed")
        p.add_argument("--workers", type=int, metavar="N", help="cap on worker threads")
        p.add_argument("--out", metavar="DIR", help="output directory")
    sub.add_parser("presets", help="list shipped presets")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.experiment == "presets":
        for name in preset_names():
            print(f"{name}\t{load_preset(name)['experiment']}")
        return 0
    try:
        if args.config:
            with open(args.config) as fh:
                raw = json.load(fh)
        else:
            raw = load_preset(args.preset)
        if raw.get("experiment", args.experiment) != args.experiment:
            raise ConfigInvalidError(
                f"config runs {raw['experiment']!r} but subcommand is {args.experiment!r}",
                path="experiment")
        raw["experiment"] = args.experiment
        if args.seed is not None:
            raw["seed"] = args.seed
        if args.workers is not None:
            raw["workers"] = args.workers
        if args.out is not None:
            raw["output"] = args.out
        config = parse_config(raw)
    except (ConfigInvalidError, json.JSONDecodeError, OSError) as err:
        print(f"statsol: invalid config: {err}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        manifest = run_experiment(config)
    except NonFiniteError as err:
        print(f"statsol: non-finite solution (level={err.level}, sample={err.sample_index}): {err}",
              file=sys.stderr)
        return EXIT_NONFINITE
    print(f"statsol: {config.experiment} done; {len(manifest['files'])} files in {config.output}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
