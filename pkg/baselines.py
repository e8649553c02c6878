"""Logistic-regression uplift baselines: one model per arm, or one with interaction terms."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from data import Standardizer, UpliftDataset
from exceptions import ModelLoadError
from numerics import Matrix, Vector, ensure_finite, sigmoid
from persistence import ModelFile, read_model_file, write_model_file

logger = logging.getLogger(__name__)

TWO_MODEL_KIND = "two_model"
INTERACTION_KIND = "interaction"


@dataclass(frozen=True)
class LogisticConfig:
    """Full-batch gradient descent settings shared by both baselines."""

    learning_rate: float = 0.1
    iterations: int = 2000
    l2: float = 1e-4


@dataclass(frozen=True, eq=False)
class LogisticModel:
    coefficients: Vector
    intercept: float

    def logits(self, design: Matrix) -> Vector:
        return design @ self.coefficients + self.intercept

    def predict_proba(self, design: Matrix) -> Vector:
        return sigmoid(self.logits(design))


def logistic_loss(
    coefficients: Vector, intercept: float, design: Matrix, y: Vector, l2: float
) -> float:
    """Mean BCE of sigmoid(design @ w + b) against ``y`` plus (l2/2)*|w|^2."""
    z = design @ coefficients + intercept
    bce = np.mean(np.logaddexp(0.0, z) - y * z)
    return float(bce + 0.5 * l2 * coefficients @ coefficients)


def logistic_gradient(
    coefficients: Vector, intercept: float, design: Matrix, y: Vector, l2: float
) -> tuple[Vector, float]:
    residual = sigmoid(design @ coefficients + intercept) - y
    n = design.shape[0]
    return design.T @ residual / n + l2 * coefficients, float(residual.sum() / n)


def fit_logistic(design: Matrix, y: Vector, config: LogisticConfig) -> LogisticModel:
    """Gradient descent from zero coefficients; deterministic for fixed inputs."""
    coefficients = np.zeros(design.shape[1])
    intercept = 0.0
    for _ in range(config.iterations):
        grad_w, grad_b = logistic_gradient(coefficients, intercept, design, y, config.l2)
        coefficients = coefficients - config.learning_rate * grad_w
        intercept -= config.learning_rate * grad_b
    ensure_finite(coefficients, "logistic coefficients")
    return LogisticModel(coefficients=coefficients, intercept=intercept)


@dataclass(frozen=True, eq=False)
class TwoModelUplift:
    """Separate response models for the treated and control arms."""

    treated: LogisticModel
    control: LogisticModel
    standardizer: Standardizer

    kind = TWO_MODEL_KIND

    def conditional_means(self, features: Matrix) -> tuple[Vector, Vector]:
        x = self.standardizer.transform(np.asarray(features, dtype=np.float64))
        return self.control.predict_proba(x), self.treated.predict_proba(x)

    def predict_uplift(self, features: Matrix) -> Vector:
        m0, m1 = self.conditional_means(features)
        return m1 - m0


def interaction_design(features: Matrix, treatment: Vector) -> Matrix:
    """Columns [X, T, X*T]."""
    t = np.asarray(treatment, dtype=np.float64)[:, None]
    return np.hstack([features, t, features * t])


@dataclass(frozen=True, eq=False)
class InteractionUplift:
    """One response model on covariates, the treatment flag and their products."""

    model: LogisticModel
    standardizer: Standardizer

    kind = INTERACTION_KIND

    def conditional_means(self, features: Matrix) -> tuple[Vector, Vector]:
        x = self.standardizer.transform(np.asarray(features, dtype=np.float64))
        n = x.shape[0]
        m0 = self.model.predict_proba(interaction_design(x, np.zeros(n)))
        m1 = self.model.predict_proba(interaction_design(x, np.ones(n)))
        return m0, m1

    def predict_uplift(self, features: Matrix) -> Vector:
        m0, m1 = self.conditional_means(features)
        return m1 - m0


def fit_two_model(ds: UpliftDataset, config: LogisticConfig | None = None) -> TwoModelUplift:
    """Fit one logistic regression on the treated rows and one on the control rows."""
    config = config or LogisticConfig()
    ds.require_both_arms("two-model training data")
    standardizer = Standardizer.fit(ds.features, ds.feature_names)
    x = standardizer.transform(ds.features)
    treated = ds.treatment == 1.0
    model = TwoModelUplift(
        treated=fit_logistic(x[treated], ds.outcome[treated], config),
        control=fit_logistic(x[~treated], ds.outcome[~treated], config),
        standardizer=standardizer,
    )
    logger.info(
        "fitted two-model baseline on %d treated / %d control rows", ds.n_treated, ds.n_control
    )
    return model


def fit_interaction(ds: UpliftDataset, config: LogisticConfig | None = None) -> InteractionUplift:
    """Fit a single logistic regression on the design [X, T, X*T]."""
    config = config or LogisticConfig()
    ds.require_both_arms("interaction training data")
    standardizer = Standardizer.fit(ds.features, ds.feature_names)
    design = interaction_design(standardizer.transform(ds.features), ds.treatment)
    model = InteractionUplift(fit_logistic(design, ds.outcome, config), standardizer)
    logger.info("fitted interaction baseline on %d rows", ds.n)
    return model


def _as_layer(model: LogisticModel) -> tuple[Matrix, Vector]:
    return model.coefficients[:, None], np.array([model.intercept])


def _from_layer(layer: tuple[Matrix, Vector], index: int, width: int) -> LogisticModel:
    weight, bias = layer
    if weight.shape != (width, 1):
        raise ModelLoadError(f"expected {width}x1 coefficients, found {weight.shape}", layer=index)
    return LogisticModel(coefficients=weight[:, 0].copy(), intercept=float(bias[0]))


def save_baseline(
    model: TwoModelUplift | InteractionUplift, path: str | Path, extra: dict[str, Any] | None = None
) -> None:
    """Write a fitted baseline; ``extra`` is stored in the header under ``run``."""
    if isinstance(model, TwoModelUplift):
        layers = [_as_layer(model.treated), _as_layer(model.control)]
    else:
        layers = [_as_layer(model.model)]
    header: dict[str, Any] = {"standardizer": model.standardizer.to_dict()}
    if extra:
        header["run"] = extra
    write_model_file(path, ModelFile(kind=model.kind, header=header, layers=layers))


def load_baseline(path: str | Path) -> TwoModelUplift | InteractionUplift:
    """Read a baseline saved by :func:`save_baseline`; the kind tag selects the class."""
    model_file = read_model_file(path)
    try:
        standardizer = Standardizer.from_dict(model_file.header["standardizer"])
    except (KeyError, TypeError, ValueError) as e:
        raise ModelLoadError(f"{path}: invalid baseline header ({e})")
    p = standardizer.width
    if len(standardizer.feature_names) not in (0, p):
        names = len(standardizer.feature_names)
        raise ModelLoadError(f"{path}: {names} feature names for width {p}")
    if model_file.kind == TWO_MODEL_KIND:
        if len(model_file.layers) != 2:
            raise ModelLoadError(f"{path}: two-model file needs 2 layers")
        return TwoModelUplift(
            treated=_from_layer(model_file.layers[0], 0, p),
            control=_from_layer(model_file.layers[1], 1, p),
            standardizer=standardizer,
        )
    if model_file.kind == INTERACTION_KIND:
        if len(model_file.layers) != 1:
            raise ModelLoadError(f"{path}: interaction file needs 1 layer")
        return InteractionUplift(_from_layer(model_file.layers[0], 0, 2 * p + 1), standardizer)
    raise ModelLoadError(f"{path}: {model_file.kind} is not a baseline model")
