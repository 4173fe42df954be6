"""
Time utilities for ctvbench.

Durations are for log lines only; nothing here may reach an artifact.
"""

import time
from contextlib import contextmanager
from logging import Logger
from typing import Iterator


def format_duration(seconds: float) -> str:
    """
    Format duration in a human-readable format.

    Args:
        seconds: Duration in seconds

    Returns:
        Formatted duration string
    """
    if seconds < 60:
        return f"{seconds:.1f}s"
    elif seconds < 3600:
        minutes = seconds / 60
        return f"{minutes:.1f}m"
    else:
        hours = seconds / 3600
        return f"{hours:.1f}h"


@contextmanager
def log_duration(logger: Logger, label: str) -> Iterator[None]:
    """Log how long the wrapped block took."""
    start = time.perf_counter()
    try:
        yield
    finally:
        logger.info("%s finished in %s", label, format_duration(time.perf_counter() - start))
