"""Logging setup for the command-line interface."""

import logging
from typing import Optional

from rich.console import Console
from rich.logging import RichHandler


def setup_logging(verbose: bool = False, console: Optional[Console] = None) -> logging.Logger:
    """
    Route hijackvet loggers through a RichHandler.

    Args:
        verbose: DEBUG level if True, WARNING otherwise
        console: Console to write to (stderr by default)

    Returns:
        The package logger
    """
    logger = logging.getLogger("hijackvet")
    logger.setLevel(logging.DEBUG if verbose else logging.WARNING)

    # Replace a handler left over from an earlier invocation in the same process
    for handler in list(logger.handlers):
        if isinstance(handler, RichHandler):
            logger.removeHandler(handler)

    handler = RichHandler(
        console=console or Console(stderr=True),
        show_path=verbose,
        rich_tracebacks=True,
        markup=False,
    )
    handler.setFormatter(logging.Formatter("%(message)s", datefmt="[%X]"))
    logger.addHandler(handler)
    logger.propagate = False
    return logger
