"""
Module for setting up a customized logger using the loguru library.

This module provides a function to configure and return a logger instance
with specific formatting, log file settings, and rotation/compression options.

Log files are stored under the configured log directory, organized by date, and
named with a timestamp. Each log file is rotated when it reaches 500 MB in size
and compressed in ZIP format.

Example usage:
    from src.logger import setup_logger
    logger = setup_logger()
    logger.info("This is an info message.")
"""
import sys
from typing import Optional

import loguru
from loguru._logger import Logger

FORMATTER: str = "{time:YYYY-MM-DD HH:mm:ss.SSS} | {level} | {name}:{function}:{line} - {message}"

_sinks: dict[str, int] = {}


def setup_logger(log_dir: Optional[str] = "logs", level: str = "INFO") -> Logger:
    """
    Configures and sets up the logger with a custom format and log file settings.

    Repeated calls reuse the sinks already installed for the same directory.

    Args:
        log_dir (str | None): Directory for log files. None logs to stderr only.
        level (str): Minimum level of the installed sinks.

    Returns:
        Logger: The configured logger instance.
    """
    if "stderr" not in _sinks:
        loguru.logger.remove()
        _sinks["stderr"] = loguru.logger.add(sys.stderr, format=FORMATTER, level=level)

    if log_dir is not None and log_dir not in _sinks:
        log_file: str = log_dir + "/{time:YYYY-MM-DD}/{time:YYYYMMDD_HHmmss}.log"
        _sinks[log_dir] = loguru.logger.add(
            log_file, format=FORMATTER, level=level, rotation="500 MB", compression="zip"
        )

    return loguru.logger
