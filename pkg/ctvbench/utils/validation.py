"""
Validation utilities for ctvbench.
"""

import math


def validate_fraction(value: float) -> bool:
    """
    Validate a closed fraction.

    Args:
        value: Fraction (0.0 to 1.0)

    Returns:
        True if value is a finite number in [0, 1], False otherwise
    """
    return math.isfinite(value) and 0.0 <= value <= 1.0


def validate_open_fraction(value: float) -> bool:
    """
    Validate a split fraction.

    Args:
        value: Fraction strictly between 0 and 1

    Returns:
        True if 0 < value < 1, False otherwise
    """
    return math.isfinite(value) and 0.0 < value < 1.0


def validate_percent(value: float) -> bool:
    """Validate a percentage in [0, 100]."""
    return math.isfinite(value) and 0.0 <= value <= 100.0


def validate_dimensions(width: int, height: int) -> bool:
    """
    Validate image dimensions.

    Args:
        width: Width in pixels
        height: Height in pixels

    Returns:
        True if both dimensions are at least 1, False otherwise
    """
    return width >= 1 and height >= 1


def validate_quality(quality: int) -> bool:
    """Validate a JPEG quality factor (50 to 100)."""
    return 50 <= quality <= 100


def validate_team_name(name: str) -> bool:
    """
    Validate a team identifier.

    Team names are non-empty and may not contain path separators.
    """
    return bool(name) and name.strip() == name and "/" not in name and "\\" not in name
