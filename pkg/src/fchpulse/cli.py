"""Command-line entry point.

One subcommand per experiment; every subcommand accepts --config, --out, and
--seed. Exit status 0 on completed experiments (including runs with flagged
hypothesis failures); nonzero only on execution errors.
"""

from __future__ import annotations

import argparse
import json
import sys

from .core import FchError
from .harness import EXPERIMENTS, ExperimentConfig, parse_config, run_experiment


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fchpulse",
        description=(
            "Numerical laboratory for n-pulse dynamics in one-dimensional "
            "fourth-order phase-field gradient flows."
        ),
    )
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="JSON config file", default=None)
        p.add_argument("--out", help="output directory", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument(
            "--plot-data", action="store_true",
            help="also emit gnuplot-ready two-column files",
        )
    return parser


def load_config(args):
    if args.config:
        config = parse_config(args.config)
        doc = config.as_dict()
        doc["experiment"] = args.experiment
    else:
        doc = {"experiment": args.experiment}
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.out is not None:
        doc["output_dir"] = args.out
    if args.plot_data:
        doc["plot_data"] = True
    return ExperimentConfig.from_dict(doc)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args)
        manifest = run_experiment(config)
    except FchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(manifest.summary, indent=2, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
