import argparse
import logging
import sys
from typing import List, Optional

from hilat import __version__, config
from hilat.commands_corpus import register as register_corpus
from hilat.commands_eval import register as register_eval
from hilat.commands_explain import register as register_explain
from hilat.commands_gradcheck import register as register_gradcheck
from hilat.commands_train import register as register_train
from hilat.errors import HilatError

logger = logging.getLogger("hilat")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hilat",
        description="Hierarchical label-wise attention: train, evaluate and explain multi-label document coders.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=config.LOG_LEVEL, help="DEBUG, INFO, WARNING, ERROR")
    parser.add_argument("--quiet", action="store_true", help="no progress bars, warnings and errors only")
    subparsers = parser.add_subparsers(dest="command", metavar="command")
    subparsers.required = True

    # Register commands
    register_corpus(subparsers)
    register_train(subparsers)
    register_eval(subparsers)
    register_explain(subparsers)
    register_gradcheck(subparsers)
    return parser


def setup_logging(level: str, quiet: bool = False) -> None:
    numeric = logging.WARNING if quiet else getattr(logging, str(level).upper(), None)
    if not isinstance(numeric, int):
        numeric = logging.INFO
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    logger.handlers[:] = [handler]
    logger.setLevel(numeric)
    logger.propagate = False


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level, args.quiet)
    try:
        return args.handler(args) or 0
    except HilatError as e:
        print(f"hilat {args.command}: error: {e.detail}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
