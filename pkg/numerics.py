"""Dense float64 arithmetic shared by the model, losses and baselines.

Matrices and vectors are plain ``numpy`` arrays of dtype float64. Public
operations check shapes up front and refuse to hand back non-finite values.
"""

from collections.abc import Callable, Sequence
from typing import Literal

import numpy as np
from numpy.typing import NDArray
from scipy.special import expit

from exceptions import NumericError, ShapeError

Matrix = NDArray[np.float64]
Vector = NDArray[np.float64]

LEAKY_SLOPE = 0.01
EPSILON = 1e-7

# expit saturates to exactly 0.0/1.0 in float64; keep sigmoid inside the open interval.
_SIGMOID_LOW = np.finfo(np.float64).tiny
_SIGMOID_HIGH = np.nextafter(1.0, 0.0)

OpTag = Literal["add", "sub", "mul", "sigmoid", "leaky-relu", "log", "clamp"]
_BINARY_OPS = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def as_matrix(values, name: str = "matrix") -> Matrix:
    """Convert to a finite 2-D float64 array."""
    array = np.asarray(values, dtype=np.float64)
    if array.ndim != 2:
        raise ShapeError(f"{name} must be 2-D", array.shape, ())
    ensure_finite(array, name)
    return array


def as_vector(values, name: str = "vector") -> Vector:
    """Convert to a finite 1-D float64 array."""
    array = np.asarray(values, dtype=np.float64)
    if array.ndim != 1:
        raise ShapeError(f"{name} must be 1-D", array.shape, ())
    ensure_finite(array, name)
    return array


def ensure_finite(array: NDArray, name: str, layer: int | None = None) -> None:
    if not np.all(np.isfinite(array)):
        raise NumericError(f"non-finite values in {name}", layer=layer)


def check_same_length(name: str, *vectors: NDArray) -> int:
    """Return the common length of ``vectors`` or raise a shape error."""
    first = vectors[0]
    for other in vectors[1:]:
        if other.shape[0] != first.shape[0]:
            raise ShapeError(name, first.shape, other.shape)
    return first.shape[0]


def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    result = a @ b
    ensure_finite(result, "matmul result")
    return result


def sigmoid(x: NDArray) -> NDArray:
    return np.clip(expit(x), _SIGMOID_LOW, _SIGMOID_HIGH)


def leaky_relu(x: NDArray, slope: float = LEAKY_SLOPE) -> NDArray:
    return np.where(x >= 0.0, x, slope * x)


def leaky_relu_grad(x: NDArray, slope: float = LEAKY_SLOPE) -> NDArray:
    return np.where(x >= 0.0, 1.0, slope)


def clamp(x: NDArray, lo: float = EPSILON, hi: float = 1.0 - EPSILON) -> NDArray:
    return np.clip(x, lo, hi)


def clamp_grad(x: NDArray, lo: float = EPSILON, hi: float = 1.0 - EPSILON) -> NDArray:
    """Derivative of :func:`clamp`: one strictly inside ``(lo, hi)``, zero elsewhere."""
    return ((x > lo) & (x < hi)).astype(np.float64)


def elementwise(
    op: OpTag,
    a: NDArray,
    b: NDArray | None = None,
    *,
    slope: float = LEAKY_SLOPE,
    lo: float = EPSILON,
    hi: float = 1.0 - EPSILON,
) -> NDArray:
    """Apply ``op`` entrywise; binary ops require ``b`` of the same shape."""
    a = np.asarray(a, dtype=np.float64)
    if op in _BINARY_OPS:
        if b is None:
            raise ValueError(f"{op} needs two operands")
        b = np.asarray(b, dtype=np.float64)
        if a.shape != b.shape:
            raise ShapeError(op, a.shape, b.shape)
        result = _BINARY_OPS[op](a, b)
    elif op == "sigmoid":
        result = sigmoid(a)
    elif op == "leaky-relu":
        result = leaky_relu(a, slope)
    elif op == "log":
        with np.errstate(divide="ignore", invalid="ignore"):
            result = np.log(a)
    elif op == "clamp":
        result = clamp(a, lo, hi)
    else:
        raise ValueError(f"unknown elementwise op {op!r}")
    ensure_finite(result, op)
    return result


def finite_difference_gradient(
    loss: Callable[[Sequence[NDArray]], float],
    theta: Sequence[NDArray],
    h: float = 1e-5,
) -> list[NDArray]:
    """Central-difference gradient of ``loss`` at ``theta``.

    ``theta`` is a sequence of arrays (a parameter set); ``loss`` receives a
    sequence of arrays of the same shapes. Only used to verify analytic
    gradients, so it favours clarity over speed.
    """
    if h <= 0:
        raise ValueError("finite difference step must be positive")
    shifted = [np.array(array, dtype=np.float64, copy=True) for array in theta]
    gradient = [np.zeros_like(array) for array in shifted]
    for array, grad in zip(shifted, gradient, strict=True):
        flat = array.reshape(-1)
        grad_flat = grad.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            upper = float(loss(shifted))
            flat[i] = original - h
            lower = float(loss(shifted))
            flat[i] = original
            if not (np.isfinite(upper) and np.isfinite(lower)):
                raise NumericError(f"non-finite loss while perturbing coordinate {i}")
            grad_flat[i] = (upper - lower) / (2.0 * h)
    return gradient


def relative_error(analytic: NDArray, numeric: NDArray) -> NDArray:
    """Entrywise |a - n| / max(|a|, |n|), zero where both vanish."""
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    diff = np.abs(analytic - numeric)
    return np.divide(diff, scale, out=np.zeros_like(diff), where=scale > 0)
