"""Minibatch SGD for the twin network, best-on-validation selection and hyper-parameter tuning."""

import logging
import math
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from data import SplitPlan, Standardizer, UpliftDataset, fold_pairs
from exceptions import DivergedError, ModelLoadError, NumericError, TuningError, UpliftError
from losses import CompositeSpec, LossVariant, bce_loss, check_indirect_propensity, uplift_term
from metrics import DEFAULT_QINI_GRID, confidence_interval, qini_coefficient, qini_curve
from model import (
    DEFAULT_HIDDEN_WIDTHS,
    DEFAULT_LINEAR_PREFIX,
    Architecture,
    Parameters,
    forward_twin,
    init_parameters,
    loss_and_gradient,
)
from numerics import LEAKY_SLOPE, Matrix, Vector
from persistence import ModelFile, read_model_file, write_model_file
from utils import child_seeds

logger = logging.getLogger(__name__)

MODEL_KIND = "twin"
ALPHA_GRID = tuple(round(0.1 * i, 1) for i in range(11))
LEARNING_RATE_GRID = (0.3, 0.1, 0.03, 0.01, 0.003)
CI_Z = 1.96


@dataclass(frozen=True)
class TrainConfig:
    variant: LossVariant = LossVariant.IE
    alpha: float = 0.5
    learning_rate: float = 0.03
    epochs: int = 200
    batch_size: int = 256
    seed: int = 0
    hidden_widths: tuple[int, ...] = DEFAULT_HIDDEN_WIDTHS
    linear_prefix: int = DEFAULT_LINEAR_PREFIX
    slope: float = LEAKY_SLOPE
    standardize: bool = True
    qini_grid: int = DEFAULT_QINI_GRID

    def __post_init__(self):
        object.__setattr__(self, "variant", LossVariant(self.variant))
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not (math.isfinite(self.learning_rate) and self.learning_rate >= 0.0):
            raise ValueError(f"learning_rate must be non-negative, got {self.learning_rate}")
        for name in ("epochs", "batch_size", "qini_grid"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1, got {getattr(self, name)}")

    @property
    def objective(self) -> CompositeSpec:
        return CompositeSpec(self.variant, self.alpha)

    def architecture(self, p: int) -> Architecture:
        return Architecture.for_features(
            p,
            hidden_widths=self.hidden_widths,
            linear_prefix=self.linear_prefix,
            slope=self.slope,
        )

    def to_dict(self) -> dict[str, Any]:
        payload = asdict(self)
        payload["variant"] = str(self.variant)
        payload["hidden_widths"] = list(self.hidden_widths)
        return payload

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "TrainConfig":
        return cls(**{**payload, "hidden_widths": tuple(payload["hidden_widths"])})


@dataclass(frozen=True)
class EpochRecord:
    """Training-part losses and validation scores after one epoch."""

    epoch: int
    train_loss: float
    train_uplift_loss: float
    train_bce: float
    valid_qini: float
    valid_uplift_mean: float
    valid_uplift_std: float


@dataclass(frozen=True, eq=False)
class TrainedModel:
    params: Parameters
    arch: Architecture
    standardizer: Standardizer
    config: TrainConfig
    best_epoch: int
    best_valid_qini: float
    history: tuple[EpochRecord, ...] = field(default=(), repr=False)

    kind = MODEL_KIND

    def conditional_means(self, features: Matrix) -> tuple[Vector, Vector]:
        """(mu0, mu1) for raw, unstandardized covariates."""
        x = self.standardizer.transform(np.asarray(features, dtype=np.float64))
        output = forward_twin(self.params, self.arch, x, np.zeros(x.shape[0]))
        return output.mu0, output.mu1

    def predict_uplift(self, features: Matrix) -> Vector:
        mu0, mu1 = self.conditional_means(features)
        return mu1 - mu0

    def history_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(record) for record in self.history])


def _epoch_record(
    epoch: int,
    params: Parameters,
    arch: Architecture,
    objective: CompositeSpec,
    train_ds: UpliftDataset,
    valid_ds: UpliftDataset,
    qini_grid: int,
) -> EpochRecord:
    train_out = forward_twin(params, arch, train_ds.features, train_ds.treatment)
    uplift = uplift_term(objective, train_out, train_ds) if objective.alpha < 1.0 else 0.0
    bce = bce_loss(train_out.muT, train_ds.outcome)
    loss = (1.0 - objective.alpha) * uplift + objective.alpha * bce
    if not math.isfinite(loss):
        raise NumericError("non-finite training loss")

    valid_out = forward_twin(params, arch, valid_ds.features, valid_ds.treatment)
    curve = qini_curve(valid_out.uplift, valid_ds.treatment, valid_ds.outcome, qini_grid)
    return EpochRecord(
        epoch=epoch,
        train_loss=loss,
        train_uplift_loss=uplift,
        train_bce=bce,
        valid_qini=qini_coefficient(curve),
        valid_uplift_mean=float(valid_out.uplift.mean()),
        valid_uplift_std=float(valid_out.uplift.std()),
    )


def train(config: TrainConfig, train_ds: UpliftDataset, valid_ds: UpliftDataset) -> TrainedModel:
    """Train with minibatch SGD and keep the epoch with the highest validation Qini.

    Args:
        config: Objective, optimiser and architecture settings
        train_ds: Rows used for gradient steps; its covariates fit the standardizer
        valid_ds: Rows scored after every epoch

    Returns:
        The best snapshot; ties go to the earliest epoch

    Raises:
        StratificationError: If either part lacks an arm
        UnsupportedPropensityError: For the IE variant when the propensity is not 1/2
        DivergedError: When a loss or gradient becomes non-finite
    """
    train_ds.require_both_arms("train part")
    valid_ds.require_both_arms("validation part")
    if config.variant is LossVariant.IE:
        check_indirect_propensity(train_ds.propensity)

    if config.standardize:
        standardizer = Standardizer.fit(train_ds.features, train_ds.feature_names)
    else:
        standardizer = Standardizer.identity(train_ds.p, train_ds.feature_names)
    train_std = standardizer.apply(train_ds)
    valid_std = standardizer.apply(valid_ds)
    arch = config.architecture(train_ds.p)
    objective = config.objective

    init_seed, shuffle_seed = child_seeds(config.seed, 2)
    params = init_parameters(arch, init_seed)
    rng = np.random.default_rng(shuffle_seed)

    history: list[EpochRecord] = []
    best: tuple[Parameters, EpochRecord] | None = None
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(train_std.n)
        try:
            for start in range(0, train_std.n, config.batch_size):
                batch = train_std.subset(order[start : start + config.batch_size])
                _, gradient = loss_and_gradient(params, arch, batch, objective)
                params = params.step(gradient, config.learning_rate)
            record = _epoch_record(
                epoch, params, arch, objective, train_std, valid_std, config.qini_grid
            )
        except NumericError as e:
            logger.warning("diverged at epoch %d: %s", epoch, e.message)
            raise DivergedError(epoch, config.learning_rate) from e
        history.append(record)
        logger.debug(
            "epoch %d: loss=%.6f valid_qini=%.6f", epoch, record.train_loss, record.valid_qini
        )
        if best is None or record.valid_qini > best[1].valid_qini:
            best = (params, record)

    best_params, best_record = best
    logger.info(
        "trained %s alpha=%g lr=%g: best epoch %d, valid qini %.6f",
        config.variant,
        config.alpha,
        config.learning_rate,
        best_record.epoch,
        best_record.valid_qini,
    )
    return TrainedModel(
        params=best_params,
        arch=arch,
        standardizer=standardizer,
        config=config,
        best_epoch=best_record.epoch,
        best_valid_qini=best_record.valid_qini,
        history=tuple(history),
    )


def save_model(tm: TrainedModel, path: str | Path, extra: dict[str, Any] | None = None) -> None:
    """Write ``tm`` in the versioned text format; ``extra`` is stored in the header."""
    header = {
        "architecture": tm.arch.to_dict(),
        "config": tm.config.to_dict(),
        "standardizer": tm.standardizer.to_dict(),
        "best_epoch": tm.best_epoch,
        "best_valid_qini": tm.best_valid_qini,
    }
    if extra:
        header["run"] = extra
    layers = [(layer.weight, layer.bias) for layer in tm.params.layers]
    write_model_file(path, ModelFile(kind=MODEL_KIND, header=header, layers=layers))


def load_model(path: str | Path, expected: Architecture | None = None) -> TrainedModel:
    """Read a model saved by :func:`save_model`.

    Raises:
        ModelLoadError: If the file is malformed, its layers disagree with the
            architecture in its header, or it differs from ``expected``
    """
    model_file = read_model_file(path, expected_kind=MODEL_KIND)
    header = model_file.header
    try:
        arch = Architecture.from_dict(header["architecture"])
        config = TrainConfig.from_dict(header["config"])
        standardizer = Standardizer.from_dict(header["standardizer"])
        best_epoch = int(header["best_epoch"])
        best_valid_qini = float(header["best_valid_qini"])
    except (KeyError, TypeError, ValueError) as e:
        raise ModelLoadError(f"{path}: invalid model header ({e})")
    if expected is not None and expected != arch:
        raise ModelLoadError(
            f"{path}: architecture mismatch, file has {arch.to_dict()}, "
            f"expected {expected.to_dict()}"
        )
    shapes = arch.layer_shapes
    if len(model_file.layers) != len(shapes):
        raise ModelLoadError(
            f"{path}: {len(model_file.layers)} layers stored, architecture has {len(shapes)}"
        )
    for i, ((weight, _), shape) in enumerate(zip(model_file.layers, shapes, strict=True)):
        if weight.shape != shape:
            raise ModelLoadError(
                f"dimensions {weight.shape} disagree with architecture {shape}", layer=i
            )
    named = len(standardizer.feature_names)
    if standardizer.mean.shape != (arch.n_features,) or named not in (0, arch.n_features):
        raise ModelLoadError(f"{path}: standardizer width disagrees with architecture")
    params = Parameters.from_arrays([a for layer in model_file.layers for a in layer])
    return TrainedModel(
        params=params,
        arch=arch,
        standardizer=standardizer,
        config=config,
        best_epoch=best_epoch,
        best_valid_qini=best_valid_qini,
    )


@dataclass(frozen=True)
class FoldRecord:
    value: float
    fold: int
    qini: float | None
    error: str | None = None


@dataclass(frozen=True)
class CandidateSummary:
    """Fold statistics of one grid value; ``ci_low``/``ci_high`` are NaN with < 2 folds."""

    value: float
    fold_values: tuple[float, ...]
    failures: int
    mean: float
    se: float
    ci_low: float
    ci_high: float

    @property
    def eligible(self) -> bool:
        return len(self.fold_values) >= 2

    def to_dict(self) -> dict[str, Any]:
        def clean(x: float) -> float | None:
            return x if math.isfinite(x) else None

        return {
            "value": self.value,
            "folds": len(self.fold_values),
            "failures": self.failures,
            "mean": clean(self.mean),
            "se": clean(self.se),
            "ci_low": clean(self.ci_low),
            "ci_high": clean(self.ci_high),
            "eligible": self.eligible,
        }


def summarize_folds(
    value: float, fold_values: Sequence[float], failures: int = 0
) -> CandidateSummary:
    values = tuple(float(v) for v in fold_values)
    if not values:
        nan = float("nan")
        return CandidateSummary(value, values, failures, nan, nan, nan, nan)
    mean, se, low, high = confidence_interval(values, CI_Z)
    return CandidateSummary(value, values, failures, mean, se, low, high)


def select(candidates: Sequence[CandidateSummary]) -> tuple[float, bool]:
    """Pick the highest mean among candidates whose CI lower bound is above 0.

    Returns:
        (selected value, fallback) where ``fallback`` is True when no candidate
        qualified and the one with the greatest lower bound was taken instead

    Raises:
        TuningError: If no candidate has at least two successful folds
    """
    eligible = [c for c in candidates if c.eligible]
    if not eligible:
        raise TuningError("no grid value had at least two successful folds")
    qualified = [c for c in eligible if c.ci_low > 0.0]
    if qualified:
        # max keeps the first of equal means, i.e. grid order.
        return max(qualified, key=lambda c: c.mean).value, False
    return max(eligible, key=lambda c: c.ci_low).value, True


@dataclass(frozen=True)
class TuneResult:
    parameter: str
    grid: tuple[float, ...]
    candidates: tuple[CandidateSummary, ...]
    selected: float
    fallback: bool
    folds: tuple[FoldRecord, ...] = field(repr=False)
    base: TrainConfig = field(repr=False)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                self.parameter: [r.value for r in self.folds],
                "fold": [r.fold for r in self.folds],
                "qini": [r.qini if r.qini is not None else np.nan for r in self.folds],
                "error": [r.error or "" for r in self.folds],
            }
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "parameter": self.parameter,
            "grid": list(self.grid),
            "selected": self.selected,
            "fallback": self.fallback,
            "confidence_z": CI_Z,
            "candidates": [c.to_dict() for c in self.candidates],
        }


def _fold_job(job: tuple[TrainConfig, UpliftDataset, UpliftDataset]) -> tuple[float | None, str]:
    """Best validation Qini of one fold, or the error that stopped it."""
    config, train_ds, valid_ds = job
    try:
        return train(config, train_ds, valid_ds).best_valid_qini, ""
    except UpliftError as e:
        return None, f"{type(e).__name__}: {e.message}"


def _run_jobs(jobs: list, workers: int) -> list[tuple[float | None, str]]:
    if workers <= 1:
        return [_fold_job(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(_fold_job, jobs))


def _tune(
    parameter: str,
    grid: Sequence[float],
    dataset: UpliftDataset,
    plan: SplitPlan,
    base: TrainConfig,
    workers: int,
) -> TuneResult:
    if plan.repeats < 2:
        raise ValueError(f"tuning needs at least 2 folds, got {plan.repeats}")
    folds = fold_pairs(dataset, plan)
    jobs = []
    keys = []
    for value in grid:
        for f, (train_ds, valid_ds) in enumerate(folds):
            # The fold seed depends on the fold only, so grid order cannot change results.
            config = replace(base, **{parameter: value, "seed": base.seed + f})
            jobs.append((config, train_ds, valid_ds))
            keys.append((value, f))
    outcomes = _run_jobs(jobs, workers)

    records = []
    for (value, f), (qini, error) in zip(keys, outcomes, strict=True):
        if error:
            logger.warning(
                "%s=%g fold %d failed (seed %d): %s", parameter, value, f, base.seed + f, error
            )
        records.append(FoldRecord(value, f, qini, error or None))

    candidates = []
    for value in grid:
        mine = [r for r in records if r.value == value]
        ok = [r.qini for r in mine if r.qini is not None]
        candidate = summarize_folds(value, ok, failures=len(mine) - len(ok))
        logger.info(
            "%s=%g: mean qini %.6f, 95%% CI [%.6f, %.6f] over %d folds",
            parameter,
            value,
            candidate.mean,
            candidate.ci_low,
            candidate.ci_high,
            len(ok),
        )
        candidates.append(candidate)
    selected, fallback = select(candidates)
    if fallback:
        logger.warning("no %s had a CI lower bound above 0; fell back to %g", parameter, selected)
    return TuneResult(
        parameter=parameter,
        grid=tuple(grid),
        candidates=tuple(candidates),
        selected=selected,
        fallback=fallback,
        folds=tuple(records),
        base=base,
    )


def tune_alpha(
    dataset: UpliftDataset,
    plan: SplitPlan,
    base: TrainConfig,
    grid: Sequence[float] = ALPHA_GRID,
    workers: int = 1,
) -> TuneResult:
    """Train every alpha of ``grid`` on each of ``plan.repeats`` folds at the base learning rate."""
    for alpha in grid:
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha grid value {alpha} outside [0, 1]")
    return _tune("alpha", grid, dataset, plan, base, workers)


def tune_learning_rate(
    dataset: UpliftDataset,
    plan: SplitPlan,
    base: TrainConfig,
    grid: Sequence[float] = LEARNING_RATE_GRID,
    workers: int = 1,
) -> TuneResult:
    """Same protocol as :func:`tune_alpha`, over learning rates at the base alpha."""
    for rate in grid:
        if not rate > 0.0:
            raise ValueError(f"learning rate grid value {rate} must be positive")
    return _tune("learning_rate", grid, dataset, plan, base, workers)
