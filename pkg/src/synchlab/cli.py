"""Command-line entry point: ``synchlab <stage> --config <path> [--out DIR] [--seed N]``.

Exit codes: 0 success, 2 configuration/validation error, 3 numeric failure
(NaN loss or gradients), 1 anything else.
"""

from __future__ import annotations

import argparse
import sys
import traceback
from pathlib import Path

from .config import STAGES, RunConfig
from .errors import ConfigError, NumericError, SynchlabError, TrainingError
from .runner import run

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synchlab",
        description="Audio-visual synchronization lab: synthetic data, two-stage "
                    "training, evaluation, attribution.")
    sub = parser.add_subparsers(dest="stage", required=True, metavar="stage")
    for stage in STAGES:
        p = sub.add_parser(stage, help=f"run the {stage} stage")
        p.add_argument("--config", required=True, type=Path, help="JSON run configuration")
        p.add_argument("--out", type=Path, default=None,
                       help="output directory (default: runs/<stage>)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = RunConfig.from_json(args.config)
        if config.stage != args.stage:
            raise ConfigError(
                f"config file is for stage {config.stage!r} but {args.stage!r} was requested")
        if args.seed is not None:
            config.seed = args.seed
        out_dir = args.out if args.out is not None else Path("runs") / args.stage
        artifacts = run(config, out_dir)
    except (ConfigError,) as e:
        print(f"synchlab: configuration error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericError, TrainingError) as e:
        print(f"synchlab: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except SynchlabError as e:
        print(f"synchlab: error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    except Exception:
        traceback.print_exc()
        return EXIT_FAILURE
    for artifact in artifacts:
        print(artifact)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
