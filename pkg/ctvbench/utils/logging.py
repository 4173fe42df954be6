"""
Logging utilities for ctvbench.
"""

import logging
import os
import sys
from typing import Optional

LOG_ENV_VAR = "CTVBENCH_LOG"
ROOT_LOGGER = "ctvbench"


def level_from_env(default: int = logging.INFO) -> int:
    """
    Resolve the log level from the CTVBENCH_LOG environment variable.

    Accepts level names (DEBUG, INFO, WARNING, ERROR) or numeric levels.
    Unknown values fall back to the default.
    """
    raw = os.environ.get(LOG_ENV_VAR, "").strip()
    if not raw:
        return default
    if raw.isdigit():
        return int(raw)
    level = logging.getLevelName(raw.upper())
    return level if isinstance(level, int) else default


def setup_logger(name: str = ROOT_LOGGER, level: Optional[int] = None) -> logging.Logger:
    """
    Setup a logger with standard configuration.

    Args:
        name: Logger name
        level: Logging level; taken from CTVBENCH_LOG when omitted

    Returns:
        Configured logger instance
    """
    logger = logging.getLogger(name)

    if not logger.handlers:
        # stdout carries command output only
        handler = logging.StreamHandler(sys.stderr)
        formatter = logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s")
        handler.setFormatter(formatter)
        logger.addHandler(handler)

    logger.setLevel(level if level is not None else level_from_env())
    return logger


def get_logger(name: str = ROOT_LOGGER) -> logging.Logger:
    """Get a logger instance."""
    return logging.getLogger(name)
