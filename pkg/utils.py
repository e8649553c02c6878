"""Utility functions for twinuplift."""

import json
from pathlib import Path
from typing import Any

import numpy as np

from exceptions import UsageError

_TRUE_WORDS = {"true", "1", "yes", "on"}
_FALSE_WORDS = {"false", "0", "no", "off"}


def parse_bool(value: Any, field_name: str) -> bool:
    """Parse a boolean config value.

    Args:
        value: bool, or one of true/false/1/0/yes/no/on/off (any case)
        field_name: Config key for error messages

    Returns:
        Parsed boolean

    Raises:
        UsageError: If the value is not a recognised boolean
    """
    if isinstance(value, bool):
        return value
    word = str(value).strip().lower()
    if word in _TRUE_WORDS:
        return True
    if word in _FALSE_WORDS:
        return False
    raise UsageError(f"Invalid boolean for {field_name}: {value!r}", key=field_name)


def parse_int(value: Any, field_name: str, minimum: int | None = None) -> int:
    try:
        number = int(value)
    except (TypeError, ValueError):
        raise UsageError(f"Invalid integer for {field_name}: {value!r}", key=field_name)
    if isinstance(value, float) and value != number:
        raise UsageError(f"Invalid integer for {field_name}: {value!r}", key=field_name)
    if minimum is not None and number < minimum:
        raise UsageError(f"{field_name} must be at least {minimum}, got {number}", key=field_name)
    return number


def parse_float(
    value: Any,
    field_name: str,
    low: float | None = None,
    high: float | None = None,
    open_low: bool = False,
    open_high: bool = False,
) -> float:
    """Parse a float config value and check it against an optional range.

    Args:
        value: Raw value from a flag, environment variable or JSON file
        field_name: Config key for error messages
        low: Lower bound, if any
        high: Upper bound, if any
        open_low: Exclude ``low`` itself
        open_high: Exclude ``high`` itself

    Returns:
        Parsed float

    Raises:
        UsageError: If the value is not a finite number or is out of range
    """
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise UsageError(f"Invalid number for {field_name}: {value!r}", key=field_name)
    if not np.isfinite(number):
        raise UsageError(f"{field_name} must be finite, got {value!r}", key=field_name)
    if low is not None and (number < low or (open_low and number == low)):
        bracket = "(" if open_low else "["
        raise UsageError(
            f"{field_name} must lie in {bracket}{low}, {high}], got {number}", key=field_name
        )
    if high is not None and (number > high or (open_high and number == high)):
        bracket = ")" if open_high else "]"
        raise UsageError(
            f"{field_name} must lie in [{low}, {high}{bracket}, got {number}", key=field_name
        )
    return number


def parse_int_list(value: Any, field_name: str) -> tuple[int, ...]:
    """Parse ``"200,200,300"`` or ``[200, 200, 300]`` into a tuple of positive ints."""
    if isinstance(value, str):
        parts = [part.strip() for part in value.split(",") if part.strip()]
    elif isinstance(value, list | tuple):
        parts = list(value)
    else:
        raise UsageError(f"Invalid list for {field_name}: {value!r}", key=field_name)
    if not parts:
        raise UsageError(f"{field_name} must not be empty", key=field_name)
    return tuple(parse_int(part, field_name, minimum=1) for part in parts)


def require_existing_path(value: Any, field_name: str) -> Path:
    path = Path(str(value))
    if not path.exists():
        raise UsageError(f"{field_name} does not exist: {path}", key=field_name)
    return path


def child_seeds(seed: int, count: int) -> list[np.random.SeedSequence]:
    """Independent, reproducible seed streams derived from one integer seed."""
    return np.random.SeedSequence(seed).spawn(count)


def standard_error(values) -> float:
    """Sample standard deviation over the square root of the sample size."""
    array = np.asarray(values, dtype=np.float64)
    if array.size < 2:
        return float("nan")
    return float(array.std(ddof=1) / np.sqrt(array.size))


def write_json(path: Path, payload: dict[str, Any]) -> None:
    """Write ``payload`` with sorted keys so reruns produce identical bytes."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def config_comment(resolved: dict[str, Any]) -> str:
    """One ``#`` line carrying the resolved configuration, prepended to CSV artifacts."""
    return "# " + json.dumps(resolved, sort_keys=True) + "\n"
