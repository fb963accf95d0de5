"""Logging setup for the CLI (library modules only call logging.getLogger)."""

import logging
from typing import Optional

from rich.logging import RichHandler


def configure_logging(config: Optional[dict] = None) -> None:
    """
    Install a rich handler on the root logger.

    Args:
        config: Configuration dict; reads the 'logging' section
    """
    log_config = (config or {}).get('logging', {}) or {}
    level = str(log_config.get('level', 'INFO')).upper()

    handlers = [RichHandler(rich_tracebacks=True, show_path=False)]

    output_file = log_config.get('output_file')
    if output_file:
        file_handler = logging.FileHandler(output_file)
        file_handler.setFormatter(
            logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s")
        )
        handlers.append(file_handler)

    logging.basicConfig(level=level, format="%(message)s", datefmt="[%X]",
                        handlers=handlers, force=True)
