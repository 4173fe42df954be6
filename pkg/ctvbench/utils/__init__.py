"""
Utility functions for ctvbench.
"""

from .logging import setup_logger, get_logger, level_from_env
from .validation import (
    validate_dimensions,
    validate_fraction,
    validate_open_fraction,
    validate_percent,
    validate_quality,
    validate_team_name,
)
from .time_utils import format_duration, log_duration

__all__ = [
    "setup_logger",
    "get_logger",
    "level_from_env",
    "validate_dimensions",
    "validate_fraction",
    "validate_open_fraction",
    "validate_percent",
    "validate_quality",
    "validate_team_name",
    "format_duration",
    "log_duration",
]
