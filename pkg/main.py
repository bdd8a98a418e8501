"""Command-line entry point for the nonlocal cross-diffusion simulator."""

import argparse
import logging
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv

from cli.commands import COMMANDS, EXIT_USAGE, run
from services.config_loader import parse_config
from services.errors import ConfigError

# Load environment variables
load_dotenv()

logging.basicConfig(
    level=os.getenv("NLXD_LOG_LEVEL", "INFO").upper(),
    format="%(asctime)s %(levelname)s %(name)s: %(message)s",
)
logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="TOML run configuration")
    common.add_argument("--output", default=None, help="output directory (overrides the config)")
    common.add_argument("--seed", type=int, default=None, help="seed for generated data (overrides the config)")
    common.add_argument(
        "--threads",
        type=int,
        default=int(os.getenv("NLXD_THREADS", "1")),
        help="worker threads for sweeps",
    )

    parser = argparse.ArgumentParser(
        prog="nlxd",
        description="Entropy-stable simulation of nonlocal cross-diffusion systems on the torus",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        subparsers.add_parser(name, parents=[common])
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else 0

    try:
        config = parse_config(args.config)
    except ConfigError as exc:
        for message in exc.errors:
            logger.error(f"config: {message}")
        return EXIT_USAGE
    return run(args.command, config, output_dir=args.output, seed=args.seed, threads=args.threads)


if __name__ == "__main__":
    sys.exit(main())
