"""Custom exceptions for twinuplift."""

from typing import Any

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3
EXIT_FALLBACK = 4


class UpliftError(Exception):
    """Base exception for twinuplift errors."""

    def __init__(
        self,
        message: str,
        exit_code: int = EXIT_USAGE,
        details: dict[str, Any] | None = None,
    ):
        self.message = message
        self.exit_code = exit_code
        self.details = details or {}
        super().__init__(self.message)


class UsageError(UpliftError):
    """Invalid or missing configuration key or command-line flag."""

    def __init__(self, message: str, key: str | None = None):
        details = {"key": key} if key else {}
        super().__init__(message=message, exit_code=EXIT_USAGE, details=details)


class DataError(UpliftError):
    """Input data cannot be used as requested."""

    def __init__(self, message: str, details: dict[str, Any] | None = None):
        super().__init__(message=message, exit_code=EXIT_DATA, details=details)


class ParseError(DataError):
    """A CSV file could not be parsed into an uplift dataset."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column '{column}'")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message, details={"row": row, "column": column})


class StratificationError(DataError):
    """A dataset part has no treated or no control rows."""

    def __init__(self, part: str, n_treated: int, n_control: int):
        super().__init__(
            f"{part} needs at least one treated and one control row "
            f"(treated={n_treated}, control={n_control})",
            details={"part": part, "treated": n_treated, "control": n_control},
        )


class UnsupportedPropensityError(DataError):
    """The indirect uplift loss only supports a propensity of one half."""

    def __init__(self, propensity: float):
        super().__init__(
            f"indirect uplift loss requires propensity 0.5, got {propensity:.4f}; "
            "rebalance the arms with data.balance_treatment first",
            details={"propensity": propensity},
        )


class GenerationError(DataError):
    """A generator model produced conditional means outside [0, 1]."""


class ModelLoadError(DataError):
    """A saved model file is malformed or does not match expectations."""

    def __init__(self, message: str, layer: int | None = None):
        if layer is not None:
            message = f"layer {layer}: {message}"
        super().__init__(message, details={"layer": layer})


class FeatureMismatchError(DataError):
    """Data columns do not match the features a model was fitted on."""

    def __init__(self, expected: tuple[str, ...] | int, found: tuple[str, ...] | int):
        if isinstance(expected, int) or isinstance(found, int):
            message = f"model expects {expected} feature columns, data has {found}"
        else:
            missing = [name for name in expected if name not in found]
            extra = [name for name in found if name not in expected]
            message = f"feature columns differ from the model's: missing {missing}, extra {extra}"
        super().__init__(message, details={"expected": expected, "found": found})


class MetricError(DataError):
    """An uplift metric cannot be evaluated on the given rows."""


class AggregationError(DataError):
    """Too few runs to aggregate."""


class NumericError(UpliftError):
    """A computation produced a non-finite value."""

    def __init__(self, message: str, layer: int | None = None):
        details = {"layer": layer} if layer is not None else {}
        if layer is not None:
            message = f"{message} (layer {layer})"
        super().__init__(message=message, exit_code=EXIT_NUMERIC, details=details)


class ShapeError(NumericError):
    """Operand shapes do not conform."""

    def __init__(self, operation: str, left: tuple[int, ...], right: tuple[int, ...]):
        super().__init__(f"{operation}: incompatible shapes {left} and {right}")
        self.details = {"left": list(left), "right": list(right)}


class DivergedError(NumericError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, learning_rate: float):
        super().__init__(
            f"training diverged at epoch {epoch} with learning rate {learning_rate}"
        )
        self.details = {"epoch": epoch, "learning_rate": learning_rate}


class TuningError(DataError):
    """No grid candidate had enough successful folds to be compared."""
