"""Shared-weight twin network for uplift.

One parameter set is evaluated twice per row: once with the treatment slot
pinned to 1 (giving mu1) and once pinned to 0 (giving mu0). The uplift
prediction is mu1 - mu0 and the conditional mean for the observed arm is
muT = t*mu1 + (1-t)*mu0.
"""

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from data import UpliftDataset
from exceptions import NumericError, ShapeError
from losses import CompositeSpec, composite, composite_gradient
from numerics import (
    EPSILON,
    LEAKY_SLOPE,
    Matrix,
    Vector,
    clamp,
    clamp_grad,
    ensure_finite,
    leaky_relu,
    leaky_relu_grad,
    sigmoid,
)

DEFAULT_HIDDEN_WIDTHS = (200, 200, 300, 100, 50, 10)
DEFAULT_LINEAR_PREFIX = 2


@dataclass(frozen=True)
class Architecture:
    """Fixed MLP family: hidden layers, then one affine unit and a sigmoid.

    The first ``linear_prefix`` hidden layers have no activation; the rest use
    leaky-ReLU. ``input_dim`` counts the covariates plus the treatment slot.
    """

    input_dim: int
    hidden_widths: tuple[int, ...] = DEFAULT_HIDDEN_WIDTHS
    linear_prefix: int = DEFAULT_LINEAR_PREFIX
    slope: float = LEAKY_SLOPE

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be at least 1, got {self.input_dim}")
        if not self.hidden_widths or min(self.hidden_widths) < 1:
            raise ValueError(f"hidden_widths must be nonempty positive, got {self.hidden_widths}")
        if not 0 <= self.linear_prefix <= len(self.hidden_widths):
            raise ValueError(
                f"linear_prefix {self.linear_prefix} exceeds {len(self.hidden_widths)} layers"
            )

    @classmethod
    def for_features(cls, p: int, **kwargs) -> "Architecture":
        return cls(input_dim=p + 1, **kwargs)

    @property
    def n_features(self) -> int:
        return self.input_dim - 1

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) of every affine layer, output layer last."""
        sizes = [self.input_dim, *self.hidden_widths, 1]
        return list(zip(sizes[:-1], sizes[1:], strict=True))

    def is_activated(self, layer: int) -> bool:
        return self.linear_prefix <= layer < len(self.hidden_widths)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_widths": list(self.hidden_widths),
            "linear_prefix": self.linear_prefix,
            "slope": self.slope,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "Architecture":
        return cls(
            input_dim=int(payload["input_dim"]),
            hidden_widths=tuple(payload["hidden_widths"]),
            linear_prefix=int(payload["linear_prefix"]),
            slope=float(payload["slope"]),
        )


@dataclass(frozen=True, eq=False)
class Layer:
    weight: Matrix  # (fan_in, fan_out)
    bias: Vector  # (fan_out,)


@dataclass(frozen=True, eq=False)
class Parameters:
    """Immutable snapshot of every weight and bias, output layer last.

    Also used for gradients, which have the same shape.
    """

    layers: tuple[Layer, ...]

    def arrays(self) -> list[np.ndarray]:
        return [a for layer in self.layers for a in (layer.weight, layer.bias)]

    @classmethod
    def from_arrays(cls, arrays: Sequence[np.ndarray]) -> "Parameters":
        if len(arrays) % 2:
            raise ValueError("parameter arrays must come in weight/bias pairs")
        return cls(
            tuple(
                Layer(np.asarray(arrays[i], dtype=np.float64), np.asarray(arrays[i + 1]))
                for i in range(0, len(arrays), 2)
            )
        )

    def step(self, gradient: "Parameters", learning_rate: float) -> "Parameters":
        """theta - learning_rate * gradient, as a new snapshot."""
        return Parameters.from_arrays(
            [a - learning_rate * g for a, g in zip(self.arrays(), gradient.arrays(), strict=True)]
        )

    def matches(self, arch: Architecture) -> bool:
        shapes = [(layer.weight.shape, layer.bias.shape) for layer in self.layers]
        return shapes == [((i, o), (o,)) for i, o in arch.layer_shapes]


@dataclass(frozen=True, eq=False)
class TwinOutput:
    mu1: Vector
    mu0: Vector
    muT: Vector
    uplift: Vector


def init_parameters(arch: Architecture, seed: int | np.random.SeedSequence) -> Parameters:
    """Weights uniform on [-sqrt(6/fan_in), sqrt(6/fan_in)], zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in arch.layer_shapes:
        bound = math.sqrt(6.0 / fan_in)
        layers.append(
            Layer(rng.uniform(-bound, bound, size=(fan_in, fan_out)), np.zeros(fan_out))
        )
    return Parameters(tuple(layers))


@dataclass(frozen=True, eq=False)
class _PassCache:
    inputs: list[Matrix]  # input to each affine layer
    pre_activations: list[Matrix]  # output of each hidden affine layer
    raw: Vector  # sigmoid output before clamping


def _forward_pass(params: Parameters, arch: Architecture, inputs: Matrix) -> _PassCache:
    hidden = len(arch.hidden_widths)
    layer_inputs = []
    pre_activations = []
    a = inputs
    for i, layer in enumerate(params.layers[:hidden]):
        layer_inputs.append(a)
        z = a @ layer.weight + layer.bias
        pre_activations.append(z)
        a = leaky_relu(z, arch.slope) if arch.is_activated(i) else z
    layer_inputs.append(a)
    head = params.layers[hidden]
    logits = (a @ head.weight + head.bias)[:, 0]
    return _PassCache(layer_inputs, pre_activations, sigmoid(logits))


def _twin_inputs(x: Matrix, arch: Architecture) -> tuple[Matrix, Matrix]:
    if x.ndim != 2 or x.shape[1] != arch.n_features:
        raise ShapeError("forward_twin features", x.shape, (x.shape[0], arch.n_features))
    n = x.shape[0]
    return np.hstack([x, np.ones((n, 1))]), np.hstack([x, np.zeros((n, 1))])


def forward_twin(params: Parameters, arch: Architecture, x: Matrix, t: Vector) -> TwinOutput:
    """Both twin passes through the same ``params``; probabilities clamped to [eps, 1-eps]."""
    output, _, _ = _forward_twin_cached(params, arch, x, t)
    return output


def _forward_twin_cached(
    params: Parameters, arch: Architecture, x: Matrix, t: Vector
) -> tuple[TwinOutput, _PassCache, _PassCache]:
    x1, x0 = _twin_inputs(np.asarray(x, dtype=np.float64), arch)
    t = np.asarray(t, dtype=np.float64)
    if t.shape != (x1.shape[0],):
        raise ShapeError("forward_twin treatment", t.shape, (x1.shape[0],))
    treated = _forward_pass(params, arch, x1)
    control = _forward_pass(params, arch, x0)
    mu1 = clamp(treated.raw, EPSILON, 1.0 - EPSILON)
    mu0 = clamp(control.raw, EPSILON, 1.0 - EPSILON)
    output = TwinOutput(mu1=mu1, mu0=mu0, muT=np.where(t == 1.0, mu1, mu0), uplift=mu1 - mu0)
    return output, treated, control


def _backward_pass(
    params: Parameters, arch: Architecture, cache: _PassCache, grad_mu: Vector
) -> list[np.ndarray]:
    """Gradient of the loss w.r.t. every array for one twin pass, given dLoss/dmu."""
    raw = cache.raw
    delta = grad_mu * clamp_grad(raw, EPSILON, 1.0 - EPSILON) * raw * (1.0 - raw)
    delta = delta[:, None]
    hidden = len(arch.hidden_widths)
    grads: list[np.ndarray] = [np.empty(0)] * (2 * (hidden + 1))
    for i in range(hidden, -1, -1):
        layer = params.layers[i]
        if i < hidden and arch.is_activated(i):
            delta = delta * leaky_relu_grad(cache.pre_activations[i], arch.slope)
        weight_grad = cache.inputs[i].T @ delta
        bias_grad = delta.sum(axis=0)
        ensure_finite(weight_grad, "weight gradient", layer=i)
        ensure_finite(bias_grad, "bias gradient", layer=i)
        grads[2 * i] = weight_grad
        grads[2 * i + 1] = bias_grad
        if i > 0:
            delta = delta @ layer.weight.T
    return grads


def loss_and_gradient(
    params: Parameters,
    arch: Architecture,
    batch: UpliftDataset,
    objective: CompositeSpec,
) -> tuple[float, Parameters]:
    """Composite loss on ``batch`` and its exact gradient w.r.t. every weight and bias.

    The shared parameters receive the sum of the contributions of both twin passes.
    """
    output, treated, control = _forward_twin_cached(params, arch, batch.features, batch.treatment)
    loss = composite(objective, output, batch)
    if not math.isfinite(loss):
        raise NumericError("non-finite composite loss")
    grad_mu1, grad_mu0 = composite_gradient(objective, output, batch)
    grads1 = _backward_pass(params, arch, treated, grad_mu1)
    grads0 = _backward_pass(params, arch, control, grad_mu0)
    return loss, Parameters.from_arrays([g1 + g0 for g1, g0 in zip(grads1, grads0, strict=True)])


def backward(
    params: Parameters,
    arch: Architecture,
    batch: UpliftDataset,
    objective: CompositeSpec,
) -> Parameters:
    """Exact gradient of the composite objective on ``batch``."""
    return loss_and_gradient(params, arch, batch, objective)[1]


def objective_value(
    params: Parameters, arch: Architecture, batch: UpliftDataset, objective: CompositeSpec
) -> float:
    return composite(objective, forward_twin(params, arch, batch.features, batch.treatment), batch)
