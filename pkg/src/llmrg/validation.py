"""Argument checks shared by the estimators and the configuration."""

from __future__ import annotations

import math
import numbers


def check_positive_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_non_negative(value, name: str) -> float:
    if not isinstance(value, numbers.Real) or not math.isfinite(value) or value < 0:
        raise ValueError(f"{name} must be a finite number >= 0, got {value!r}")
    return float(value)


def check_unit_interval(value, name: str) -> float:
    if not isinstance(value, numbers.Real) or not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")
    return float(value)


def check_tau(value, name: str = "tau") -> int:
    """Verification threshold on the 0..100 score scale; 101 rejects every chain."""
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or not 0 <= value <= 101:
        raise ValueError(f"{name} must be an integer in 0..100 (101 rejects all), got {value!r}")
    return int(value)


def check_choice(value, choices, name: str):
    if value not in choices:
        raise ValueError(f"{name} must be one of {tuple(choices)}, got {value!r}")
    return value


def check_rank(rank, n) -> None:
    """1-based rank and cutoff for the ranking metrics."""
    check_positive_int(rank, "rank")
    check_positive_int(n, "n")
