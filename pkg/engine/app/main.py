import argparse
import logging
import sys
from typing import List, Optional

from pydantic import ValidationError
from pythonjsonlogger import jsonlogger

from .api import commands
from .core.exceptions import ConfigError, DatasetError, PlanningError
from .models import RunConfig
from .utils.config_parser import ConfigFileParser

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class _Parser(argparse.ArgumentParser):
    """Raises instead of exiting so cli_main owns the exit code"""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="Config file with [section] key = value entries")
    common.add_argument("--seed", type=int, help="Override [run] seed")
    common.add_argument("--out", help="Override [run] output_dir")
    common.add_argument("--world", help="Override [geometry] world_file")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")
    common.add_argument("--log-json", action="store_true", help="Emit JSON log lines")

    parser = _Parser(prog="iig", description="Incremental informative planning toolkit")
    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    commands.register(subparsers, common)
    return parser


def configure_logging(level: str, json_format: bool = False):
    handler = logging.StreamHandler(sys.stderr)
    if json_format:
        handler.setFormatter(jsonlogger.JsonFormatter(LOG_FORMAT))
    else:
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root = logging.getLogger()
    for existing in list(root.handlers):
        root.removeHandler(existing)
    root.addHandler(handler)
    try:
        root.setLevel(level.upper())
    except ValueError as e:
        raise ConfigError(f"Unknown log level '{level}'") from e


def load_config(args: argparse.Namespace) -> RunConfig:
    config = ConfigFileParser.parse_config(args.config) if args.config else RunConfig()
    return ConfigFileParser.with_overrides(config, seed=args.seed, output_dir=args.out, world_file=args.world)


def cli_main(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand; returns 0 on success, 2 on usage/config errors, 1 otherwise"""
    try:
        args = build_parser().parse_args(argv)
        config = load_config(args)
        configure_logging(args.log_level or config.run.log_level, args.log_json)
    except SystemExit as e:
        # --help
        return EXIT_OK if not e.code else EXIT_USAGE
    except (ConfigError, ValidationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE

    logger.info(f"Starting '{args.command}' (seed {config.run.seed}, output {config.run.output_dir})")
    try:
        code = args.handler(args, config)
    except FileNotFoundError as e:
        logger.error(str(e))
        return EXIT_USAGE
    except (ConfigError, DatasetError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_USAGE
    except (PlanningError, ValueError, OSError) as e:
        logger.error(f"'{args.command}' failed: {e}")
        return EXIT_RUNTIME
    logger.info(f"Finished '{args.command}'")
    return code


if __name__ == "__main__":
    sys.exit(cli_main())
