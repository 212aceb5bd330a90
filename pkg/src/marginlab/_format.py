"""Shared numeric formatting: 9 significant digits everywhere except model files."""

from __future__ import annotations

import math


def fmt9(x):
    """Format a float with 9 significant digits."""
    return format(float(x), ".9g")


def round9(x):
    """Round a float to the value its 9-significant-digit form parses back to."""
    x = float(x)
    if not math.isfinite(x):
        return x
    return float(fmt9(x))
