"""Input loading and artifact writing shared by the subcommands."""

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import pandas as pd

from baselines import InteractionUplift, TwoModelUplift, load_baseline
from config import ExperimentConfig
from data import (
    SyntheticSpec,
    UpliftDataset,
    generate_bootstrap,
    generate_parametric,
    load_csv,
    load_truth,
)
from numerics import Vector
from persistence import peek_kind
from training import MODEL_KIND, TrainedModel, load_model
from utils import config_comment

logger = logging.getLogger(__name__)

UpliftScorer = TrainedModel | TwoModelUplift | InteractionUplift


def load_dataset(config: ExperimentConfig) -> UpliftDataset:
    return load_csv(config.data, config.outcome_col, config.treatment_col, config.propensity)


def load_scorer(path: str | Path) -> UpliftScorer:
    """Load a twin network or a baseline, dispatching on the file's kind tag."""
    if peek_kind(path) == MODEL_KIND:
        return load_model(path)
    return load_baseline(path)


def load_bootstrap_source(config: ExperimentConfig) -> tuple[UpliftDataset, UpliftScorer]:
    """The CSV to resample and its generator, with columns in the generator's order."""
    generator = load_scorer(config.generator_model)
    source = generator.standardizer.align(load_dataset(config))
    return source, generator


@dataclass(frozen=True, eq=False)
class DataSource:
    """Draws a dataset and its true uplift from a seed.

    Holds either a parametric ``spec`` or a ``source`` table with the
    ``generator`` its bootstrap replicates are drawn from.
    """

    spec: SyntheticSpec | None = None
    source: UpliftDataset | None = None
    generator: UpliftScorer | None = None

    def draw(self, seed: int) -> tuple[UpliftDataset, Vector]:
        if self.spec is not None:
            return generate_parametric(replace(self.spec, seed=seed))
        sample = generate_bootstrap(self.source, self.generator, seed)
        return sample.dataset, sample.true_uplift


def data_source(config: ExperimentConfig) -> DataSource | None:
    """The generator behind the experiment data, or None for a plain CSV."""
    if not config.data:
        return DataSource(spec=config.synthetic_spec(config.data_seed))
    if getattr(config, "generator_model", None):
        source, generator = load_bootstrap_source(config)
        return DataSource(source=source, generator=generator)
    return None


def load_experiment_data(
    config: ExperimentConfig, source: DataSource | None = None
) -> tuple[UpliftDataset, Vector | None]:
    """The configured CSV (with its truth file when given) or a dataset drawn from ``source``.

    Generated data is drawn from ``data_seed`` so the dataset stays fixed while
    ``seed`` varies splits and initialisations.
    """
    source = source or data_source(config)
    if source is None:
        ds = load_dataset(config)
        truth_path = getattr(config, "truth", None)
        truth = load_truth(truth_path, ds.n) if truth_path else None
        logger.info("loaded %d rows, %d features from %s", ds.n, ds.p, config.data)
        return ds, truth
    ds, truth = source.draw(config.data_seed)
    kind = "synthetic" if source.spec is not None else "bootstrap"
    logger.info(
        "generated %d %s rows, %d features (data_seed %d)", ds.n, kind, ds.p, config.data_seed
    )
    return ds, truth


def write_frame(frame: pd.DataFrame, path: Path, config: ExperimentConfig) -> None:
    """CSV artifact led by one ``#`` line carrying the resolved configuration."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(config_comment(config.as_dict()))
        frame.to_csv(f, index=False, float_format="%.17g")
