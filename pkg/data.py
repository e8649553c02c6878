"""RCT datasets: CSV ingestion, transformed outcome, splitting and synthetic generators."""

import io
import logging
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Protocol

import numpy as np
import pandas as pd
from scipy.optimize import brentq

from exceptions import (
    FeatureMismatchError,
    GenerationError,
    ParseError,
    StratificationError,
)
from numerics import EPSILON, Matrix, Vector, as_matrix, as_vector, clamp, sigmoid
from utils import child_seeds

logger = logging.getLogger(__name__)

DEFAULT_TREATMENT_COLUMN = "treatment"
DEFAULT_OUTCOME_COLUMN = "outcome"


@dataclass(frozen=True, eq=False)
class UpliftDataset:
    """Immutable table of covariates, treatment flags and binary outcomes.

    ``propensity`` is the constant probability of treatment assignment.
    """

    features: Matrix
    treatment: Vector
    outcome: Vector
    propensity: float
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        features = as_matrix(np.array(self.features, dtype=np.float64), "features")
        treatment = as_vector(np.array(self.treatment, dtype=np.float64), "treatment")
        outcome = as_vector(np.array(self.outcome, dtype=np.float64), "outcome")
        n = features.shape[0]
        if n < 1:
            raise ParseError("dataset has no rows")
        if treatment.shape[0] != n or outcome.shape[0] != n:
            raise ParseError(
                f"row counts differ: features={n}, treatment={treatment.shape[0]}, "
                f"outcome={outcome.shape[0]}"
            )
        for name, values in (("treatment", treatment), ("outcome", outcome)):
            bad = np.flatnonzero((values != 0.0) & (values != 1.0))
            if bad.size:
                raise ParseError(f"{name} must be 0 or 1", row=int(bad[0]), column=name)
        if not 0.0 < self.propensity < 1.0:
            raise ParseError(f"propensity must lie in (0, 1), got {self.propensity}")
        names = tuple(self.feature_names) or tuple(f"x{j + 1}" for j in range(features.shape[1]))
        if len(names) != features.shape[1]:
            raise ParseError(
                f"{len(names)} feature names for {features.shape[1]} feature columns"
            )
        for array in (features, treatment, outcome):
            array.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "treatment", treatment)
        object.__setattr__(self, "outcome", outcome)
        object.__setattr__(self, "propensity", float(self.propensity))
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def n_treated(self) -> int:
        return int(self.treatment.sum())

    @property
    def n_control(self) -> int:
        return self.n - self.n_treated

    def subset(self, indices) -> "UpliftDataset":
        """Rows at ``indices`` (in that order), same propensity."""
        indices = np.asarray(indices, dtype=np.intp)
        return replace(
            self,
            features=self.features[indices],
            treatment=self.treatment[indices],
            outcome=self.outcome[indices],
        )

    def with_features(self, features: Matrix) -> "UpliftDataset":
        return replace(self, features=features)

    def require_both_arms(self, part: str = "dataset") -> None:
        if self.n_treated == 0 or self.n_control == 0:
            raise StratificationError(part, self.n_treated, self.n_control)

    def treated_rate(self) -> float:
        return float(self.outcome[self.treatment == 1.0].mean())

    def control_rate(self) -> float:
        return float(self.outcome[self.treatment == 0.0].mean())

    def empirical_ate(self) -> float:
        """Treated response rate minus control response rate."""
        self.require_both_arms()
        return self.treated_rate() - self.control_rate()


class ConditionalMeanModel(Protocol):
    """Anything that predicts Pr(Y=1 | T=0, x) and Pr(Y=1 | T=1, x) per row."""

    def conditional_means(self, features: Matrix) -> tuple[Vector, Vector]: ...


@dataclass(frozen=True)
class Standardizer:
    """Per-feature centring and scaling fitted on a training part.

    ``feature_names`` records the column order the model was fitted on; it is
    empty for models saved without names.
    """

    mean: Vector
    scale: Vector
    feature_names: tuple[str, ...] = ()

    @classmethod
    def fit(cls, features: Matrix, feature_names: tuple[str, ...] = ()) -> "Standardizer":
        mean = features.mean(axis=0)
        scale = features.std(axis=0)
        # Constant columns are centred but not scaled.
        scale = np.where(scale > 0.0, scale, 1.0)
        return cls(mean=mean, scale=scale, feature_names=tuple(feature_names))

    @classmethod
    def identity(cls, p: int, feature_names: tuple[str, ...] = ()) -> "Standardizer":
        return cls(mean=np.zeros(p), scale=np.ones(p), feature_names=tuple(feature_names))

    @classmethod
    def from_dict(cls, values: dict) -> "Standardizer":
        return cls(
            mean=np.asarray(values["mean"], dtype=np.float64),
            scale=np.asarray(values["scale"], dtype=np.float64),
            feature_names=tuple(values.get("feature_names", ())),
        )

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "feature_names": list(self.feature_names),
        }

    @property
    def width(self) -> int:
        return self.mean.shape[0]

    def transform(self, features: Matrix) -> Matrix:
        if features.ndim != 2 or features.shape[1] != self.width:
            found = features.shape[1] if features.ndim == 2 else 0
            raise FeatureMismatchError(self.width, found)
        return (features - self.mean) / self.scale

    def apply(self, ds: UpliftDataset) -> UpliftDataset:
        return ds.with_features(self.transform(ds.features))

    def align(self, ds: UpliftDataset) -> UpliftDataset:
        """``ds`` with its feature columns in fitted order, matched by name.

        Without recorded names only the column count is checked.
        """
        if not self.feature_names:
            if ds.p != self.width:
                raise FeatureMismatchError(self.width, ds.p)
            return ds
        if ds.feature_names == self.feature_names:
            return ds
        if sorted(ds.feature_names) != sorted(self.feature_names):
            raise FeatureMismatchError(self.feature_names, ds.feature_names)
        order = [ds.feature_names.index(name) for name in self.feature_names]
        logger.info("reordered %d feature columns to the model's order", ds.p)
        return replace(ds, features=ds.features[:, order], feature_names=self.feature_names)


_PARSER_LINE = re.compile(r"line (\d+)")


def _parses_as_float(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def _table_lines(path: Path) -> list[str]:
    """Header and data lines of ``path``; blank lines and lines starting with ``#`` are dropped."""
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise ParseError(f"file not found: {path}")
    lines: list[str] = []
    for chunk in raw.splitlines():
        if not chunk.strip() or chunk.startswith(b"#"):
            continue
        try:
            lines.append(chunk.decode("utf-8"))
        except UnicodeDecodeError as exc:
            # lines[0] is the header, so len(lines) is the 1-based data row.
            raise ParseError(f"invalid UTF-8 in {path}: {exc.reason}", row=len(lines) or None)
    if lines:
        lines[0] = lines[0].removeprefix("\ufeff")
    return lines


def load_csv(
    path: str | Path,
    outcome_col: str = DEFAULT_OUTCOME_COLUMN,
    treatment_col: str = DEFAULT_TREATMENT_COLUMN,
    propensity: float | None = None,
) -> UpliftDataset:
    """Read an RCT table; every column other than outcome and treatment is a feature.

    Rows are reported 1-based counting data rows only (the header is not a row).
    Lines starting with ``#`` are ignored; a ``#`` inside a line is ordinary text.
    """
    path = Path(path)
    lines = _table_lines(path)
    if not lines:
        raise ParseError(f"empty file: {path}")
    try:
        frame = pd.read_csv(io.StringIO("\n".join(lines)), dtype=str, keep_default_na=False)
    except pd.errors.ParserError as exc:
        match = _PARSER_LINE.search(str(exc))
        row = int(match.group(1)) - 1 if match else None
        raise ParseError(f"malformed row in {path}", row=row or None)
    if frame.empty:
        raise ParseError(f"no data rows in {path}")
    for column in (outcome_col, treatment_col):
        if column not in frame.columns:
            raise ParseError(f"missing column in {path}", column=column)

    numeric = {}
    for column in frame.columns:
        cells = frame[column].str.strip()
        try:
            # astype(float) rounds correctly, so written values read back bit-identically.
            values = cells.to_numpy().astype(np.float64)
            bad = np.flatnonzero(~np.isfinite(values))
        except ValueError:
            bad = np.array([i for i, cell in enumerate(cells) if not _parses_as_float(cell)])
        if bad.size:
            row = int(bad[0])
            raise ParseError(
                f"non-numeric value {frame[column].iloc[row]!r}", row=row + 1, column=column
            )
        numeric[column] = values

    for column in (outcome_col, treatment_col):
        values = numeric[column]
        bad = np.flatnonzero((values != 0.0) & (values != 1.0))
        if bad.size:
            row = int(bad[0])
            raise ParseError(
                f"value {frame[column].iloc[row]!r} is not 0 or 1", row=row + 1, column=column
            )

    feature_names = tuple(c for c in frame.columns if c not in (outcome_col, treatment_col))
    if feature_names:
        features = np.column_stack([numeric[c] for c in feature_names])
    else:
        features = np.zeros((len(frame), 0))
    treatment = numeric[treatment_col]
    if propensity is None:
        propensity = float(treatment.mean())
        logger.debug("estimated propensity %.4f from %s", propensity, path)
    return UpliftDataset(
        features=features,
        treatment=treatment,
        outcome=numeric[outcome_col],
        propensity=propensity,
        feature_names=feature_names,
    )


def to_frame(
    ds: UpliftDataset,
    outcome_col: str = DEFAULT_OUTCOME_COLUMN,
    treatment_col: str = DEFAULT_TREATMENT_COLUMN,
) -> pd.DataFrame:
    frame = pd.DataFrame(ds.features, columns=list(ds.feature_names))
    frame[treatment_col] = ds.treatment.astype(np.int64)
    frame[outcome_col] = ds.outcome.astype(np.int64)
    return frame


def write_csv(
    ds: UpliftDataset,
    path: str | Path,
    outcome_col: str = DEFAULT_OUTCOME_COLUMN,
    treatment_col: str = DEFAULT_TREATMENT_COLUMN,
    header_comment: str = "",
) -> None:
    """Write ``ds`` so that :func:`load_csv` reads back identical values."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(header_comment)
        to_frame(ds, outcome_col, treatment_col).to_csv(f, index=False, float_format="%.17g")


def transform_outcome(ds: UpliftDataset) -> Vector:
    """Transformed outcome Z = T*Y/e - (1-T)*Y/(1-e); E[Z | x] is the uplift at x."""
    e = ds.propensity
    t, y = ds.treatment, ds.outcome
    return t * y / e - (1.0 - t) * y / (1.0 - e)


def balance_treatment(ds: UpliftDataset, seed: int, method: str = "undersample") -> UpliftDataset:
    """Resample so both arms have equal size and the propensity becomes 1/2.

    ``undersample`` drops random rows of the majority arm; ``oversample``
    draws extra minority rows with replacement.
    """
    ds.require_both_arms("balance_treatment input")
    rng = np.random.default_rng(seed)
    treated = np.flatnonzero(ds.treatment == 1.0)
    control = np.flatnonzero(ds.treatment == 0.0)
    small, large = sorted((treated, control), key=len)
    if method == "undersample":
        large = np.sort(rng.choice(large, size=small.size, replace=False))
    elif method == "oversample":
        extra = rng.choice(small, size=large.size - small.size, replace=True)
        small = np.concatenate([small, extra])
    else:
        raise ValueError(f"unknown balancing method {method!r}")
    indices = np.concatenate([small, large])
    indices = indices[rng.permutation(indices.size)]
    balanced = ds.subset(indices)
    return replace(balanced, propensity=0.5)


@dataclass(frozen=True)
class SplitPlan:
    """How to carve a dataset into a holdout part and ``repeats`` train/valid pairs."""

    holdout_fraction: float = 0.30
    train_fraction_of_rest: float = 0.60
    repeats: int = 10
    seed: int = 0

    def __post_init__(self):
        for name in ("holdout_fraction", "train_fraction_of_rest"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {value}")
        if self.repeats < 1:
            raise ValueError(f"repeats must be at least 1, got {self.repeats}")


def _checked_subset(ds: UpliftDataset, indices, part: str) -> UpliftDataset:
    subset = ds.subset(indices)
    subset.require_both_arms(part)
    return subset


def shuffle_indices(
    n: int, first_fraction: float, seed: int | np.random.SeedSequence
) -> tuple[np.ndarray, np.ndarray]:
    """Sorted row indices of a seeded shuffle cut after ``round(n * first_fraction)`` rows."""
    order = np.random.default_rng(seed).permutation(n)
    cut = int(round(n * first_fraction))
    return np.sort(order[:cut]), np.sort(order[cut:])


def train_valid_split(
    ds: UpliftDataset, train_fraction: float, seed: int | np.random.SeedSequence
) -> tuple[UpliftDataset, UpliftDataset]:
    """One seeded shuffle of ``ds`` into a train part and a validation part."""
    train_idx, valid_idx = shuffle_indices(ds.n, train_fraction, seed)
    train = _checked_subset(ds, train_idx, "train part")
    valid = _checked_subset(ds, valid_idx, "validation part")
    return train, valid


def holdout_indices(n: int, plan: SplitPlan) -> tuple[np.ndarray, np.ndarray]:
    return shuffle_indices(n, plan.holdout_fraction, child_seeds(plan.seed, plan.repeats + 1)[0])


def holdout_split(ds: UpliftDataset, plan: SplitPlan) -> tuple[UpliftDataset, UpliftDataset]:
    """(holdout, rest): the holdout is drawn once from ``plan.seed`` and never reused."""
    holdout_idx, rest_idx = holdout_indices(ds.n, plan)
    return _checked_subset(ds, holdout_idx, "holdout part"), ds.subset(rest_idx)


def fold_pairs(ds: UpliftDataset, plan: SplitPlan) -> list[tuple[UpliftDataset, UpliftDataset]]:
    """``plan.repeats`` independent train/valid shuffles of ``ds``."""
    fold_seeds = child_seeds(plan.seed, plan.repeats + 1)[1:]
    return [train_valid_split(ds, plan.train_fraction_of_rest, s) for s in fold_seeds]


def split(
    ds: UpliftDataset, plan: SplitPlan
) -> tuple[UpliftDataset, list[tuple[UpliftDataset, UpliftDataset]]]:
    """Draw the holdout once, then ``plan.repeats`` independent train/valid shuffles of the rest."""
    holdout, rest = holdout_split(ds, plan)
    return holdout, fold_pairs(rest, plan)


@dataclass(frozen=True, eq=False)
class SyntheticSpec:
    """Logistic-link RCT generator with Gaussian covariates.

    Pr(Y=1 | T, x) = sigmoid(b0 + x.beta + T * (g0 + x.gamma)).
    """

    n: int
    p: int
    seed: int
    baseline_coeffs: Vector
    baseline_intercept: float
    uplift_coeffs: Vector
    uplift_intercept: float
    sparsity: float = 0.1

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"n must be at least 2, got {self.n}")
        if self.p < 1:
            raise ValueError(f"p must be at least 1, got {self.p}")
        if not 0.0 <= self.sparsity <= 1.0:
            raise ValueError(f"sparsity must lie in [0, 1], got {self.sparsity}")
        for name in ("baseline_coeffs", "uplift_coeffs"):
            coeffs = as_vector(getattr(self, name), name)
            if coeffs.shape[0] != self.p:
                raise ValueError(f"{name} has {coeffs.shape[0]} entries, expected {self.p}")
            object.__setattr__(self, name, coeffs)

    @classmethod
    def default(
        cls,
        n: int,
        p: int,
        seed: int,
        sparsity: float = 0.1,
        baseline_rate: float = 0.10,
        uplift_magnitude: float = 0.5,
        uplift_intercept: float = 0.05,
    ) -> "SyntheticSpec":
        """Draw coefficients from ``seed``: dense baseline, sparse interactions."""
        rng = np.random.default_rng(child_seeds(seed, 2)[0])
        beta = rng.normal(0.0, 1.0 / math.sqrt(p), size=p)
        gamma = np.zeros(p)
        active = math.ceil(sparsity * p)
        if active:
            chosen = rng.choice(p, size=active, replace=False)
            gamma[chosen] = uplift_magnitude * rng.choice([-1.0, 1.0], size=active)
        intercept = baseline_intercept_for_rate(baseline_rate, float(np.linalg.norm(beta)))
        return cls(
            n=n,
            p=p,
            seed=seed,
            baseline_coeffs=beta,
            baseline_intercept=intercept,
            uplift_coeffs=gamma,
            uplift_intercept=uplift_intercept,
            sparsity=sparsity,
        )

    def logits(self, features: Matrix) -> tuple[Vector, Vector]:
        control = self.baseline_intercept + features @ self.baseline_coeffs
        treated = control + self.uplift_intercept + features @ self.uplift_coeffs
        return control, treated

    def conditional_means(self, features: Matrix) -> tuple[Vector, Vector]:
        control, treated = self.logits(features)
        return sigmoid(control), sigmoid(treated)

    def true_uplift(self, features: Matrix) -> Vector:
        m0, m1 = self.conditional_means(features)
        return m1 - m0


def baseline_intercept_for_rate(rate: float, spread: float) -> float:
    """Intercept b0 with E[sigmoid(b0 + s*Z)] = rate for Z ~ N(0, 1) and s = ``spread``."""
    nodes, weights = np.polynomial.hermite_e.hermegauss(64)
    weights = weights / weights.sum()

    def gap(b0: float) -> float:
        return float(weights @ sigmoid(b0 + spread * nodes)) - rate

    return float(brentq(gap, -50.0, 50.0, xtol=1e-12))


def draw_outcomes(
    features: Matrix, treatment: Vector, model: ConditionalMeanModel, rng: np.random.Generator
) -> Vector:
    """Bernoulli outcomes with success probability m_T(x) per row."""
    m0, m1 = model.conditional_means(features)
    probability = np.where(treatment == 1.0, m1, m0)
    return (rng.random(treatment.shape[0]) < probability).astype(np.float64)


def generate_parametric(spec: SyntheticSpec) -> tuple[UpliftDataset, Vector]:
    """Draw a dataset and its true uplift from ``spec``; reproducible from ``spec.seed``."""
    rng = np.random.default_rng(child_seeds(spec.seed, 2)[1])
    features = rng.standard_normal((spec.n, spec.p))
    treatment = (rng.random(spec.n) < 0.5).astype(np.float64)
    outcome = draw_outcomes(features, treatment, spec, rng)
    ds = UpliftDataset(
        features=features,
        treatment=treatment,
        outcome=outcome,
        propensity=0.5,
        feature_names=tuple(f"x{j + 1}" for j in range(spec.p)),
    )
    return ds, spec.true_uplift(features)


@dataclass(frozen=True, eq=False)
class BootstrapSample:
    dataset: UpliftDataset
    true_uplift: Vector = field(repr=False)


def generate_bootstrap(
    source: UpliftDataset, fitted: ConditionalMeanModel, seed: int
) -> BootstrapSample:
    """Resample rows with replacement and redraw outcomes from ``fitted``.

    Covariates and treatment flags of the resampled rows are kept; the
    generator's conditional means become the known truth.
    """
    rng = np.random.default_rng(seed)
    indices = rng.integers(0, source.n, size=source.n)
    resampled = source.subset(indices)
    m0, m1 = fitted.conditional_means(resampled.features)
    for name, means in (("m0", m0), ("m1", m1)):
        means = np.asarray(means, dtype=np.float64)
        if not np.all(np.isfinite(means)) or np.any((means < 0.0) | (means > 1.0)):
            raise GenerationError(f"generator conditional mean {name} outside [0, 1]")
    m0 = clamp(np.asarray(m0, dtype=np.float64), EPSILON, 1.0 - EPSILON)
    m1 = clamp(np.asarray(m1, dtype=np.float64), EPSILON, 1.0 - EPSILON)
    probability = np.where(resampled.treatment == 1.0, m1, m0)
    outcome = (rng.random(source.n) < probability).astype(np.float64)
    return BootstrapSample(dataset=replace(resampled, outcome=outcome), true_uplift=m1 - m0)


def write_truth(true_uplift: Vector, path: str | Path, header_comment: str = "") -> None:
    """Known uplift per dataset row, columns ``row`` (0-based) and ``true_uplift``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({"row": np.arange(true_uplift.shape[0]), "true_uplift": true_uplift})
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(header_comment)
        frame.to_csv(f, index=False, float_format="%.17g")


def load_truth(path: str | Path, n: int) -> Vector:
    """Read a truth file written by :func:`write_truth` for a dataset of ``n`` rows."""
    path = Path(path)
    try:
        frame = pd.read_csv(path, comment="#", float_precision="round_trip")
    except (FileNotFoundError, pd.errors.EmptyDataError):
        raise ParseError(f"cannot read truth file {path}")
    for column in ("row", "true_uplift"):
        if column not in frame.columns:
            raise ParseError(f"missing column in {path}", column=column)
    if len(frame) != n or not np.array_equal(frame["row"].to_numpy(), np.arange(n)):
        raise ParseError(f"{path} must list rows 0..{n - 1} in order, found {len(frame)} rows")
    values = pd.to_numeric(frame["true_uplift"], errors="coerce").to_numpy(dtype=np.float64)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise ParseError("non-numeric true uplift", row=int(bad[0]) + 1, column="true_uplift")
    return values
