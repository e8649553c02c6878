"""simulate: write a synthetic RCT dataset and its known uplift."""

import logging
from pathlib import Path

from commands.common import load_bootstrap_source
from config import ExperimentConfig
from data import generate_bootstrap, generate_parametric, write_csv, write_truth
from utils import config_comment

logger = logging.getLogger(__name__)


def run(config: ExperimentConfig) -> int:
    out = Path(config.out)
    header = config_comment(config.as_dict())
    if config.mode == "parametric":
        ds, truth = generate_parametric(config.synthetic_spec(config.seed))
    else:
        source, generator = load_bootstrap_source(config)
        sample = generate_bootstrap(source, generator, config.seed)
        ds, truth = sample.dataset, sample.true_uplift

    write_csv(ds, out / "dataset.csv", config.outcome_col, config.treatment_col, header)
    write_truth(truth, out / "truth.csv", header)
    logger.info("wrote %s and %s", out / "dataset.csv", out / "truth.csv")
    print(f"n={ds.n} p={ds.p} ate={ds.empirical_ate():.6f} seed={config.seed}")
    return 0
