"""Argument checks shared by the estimators and the CLI."""

from __future__ import annotations

import numbers

from .data import CascadeLog
from .exceptions import DataError


def check_cascade_log(log, *, allow_empty=False) -> CascadeLog:
    if not isinstance(log, CascadeLog):
        raise TypeError(f"expected a CascadeLog, got {type(log).__name__}")
    if not allow_empty and len(log) == 0:
        raise DataError("cascade log is empty")
    return log


def check_fraction(value, name, *, low=0.0, high=1.0) -> float:
    if not isinstance(value, numbers.Real) or not low <= float(value) <= high:
        raise ValueError(f"{name} must be a number in [{low}, {high}], got {value!r}")
    return float(value)


def check_alpha(alpha) -> float:
    return check_fraction(alpha, "alpha")


def check_k(k, n_influencers) -> int:
    if not isinstance(k, numbers.Integral) or k < 0:
        raise ValueError(f"k must be a non-negative integer, got {k!r}")
    if k > n_influencers:
        raise ValueError(f"k={k} exceeds the number of influencers ({n_influencers})")
    return int(k)


def check_attr(profiles, attr) -> str:
    if attr not in profiles.schema:
        raise DataError(f"unknown attribute {attr!r}; schema has {profiles.schema.names}")
    return attr
