"""evaluate: score a CSV with a saved model and report the uplift metrics."""

import logging
from pathlib import Path

from commands.common import load_dataset, load_scorer
from config import ExperimentConfig
from metrics import evaluate, permutation_null, write_curve_csv
from utils import config_comment, write_json

logger = logging.getLogger(__name__)


def run(config: ExperimentConfig) -> int:
    out = Path(config.out)
    scorer = load_scorer(config.model)
    # Columns are matched to the model by name; a mismatch is a data error.
    ds = scorer.standardizer.align(load_dataset(config))
    ds.require_both_arms("evaluation data")
    scores = scorer.predict_uplift(ds.features)
    report, curve = evaluate(
        scores,
        ds.treatment,
        ds.outcome,
        config.qini_grid,
        config.kendall_bins,
        literal=config.qini_literal,
    )
    payload = {
        "config": config.as_dict(),
        "model_kind": scorer.kind,
        "rows": ds.n,
        **report.to_dict(),
    }
    if config.permutations:
        null = permutation_null(
            scores,
            ds.treatment,
            ds.outcome,
            permutations=config.permutations,
            seed=config.seed,
            qini_grid=config.qini_grid,
            kendall_bins=config.kendall_bins,
        )
        payload["permutation_null"] = {
            "permutations": config.permutations,
            "qini_mean": null.qini_mean,
            "qini_std": null.qini_std,
            "kendall_mean": null.kendall_mean,
            "kendall_std": null.kendall_std,
        }
    write_json(out / "report.json", payload)
    write_curve_csv(curve, out / "curve.csv", config_comment(config.as_dict()))
    logger.info("qini %.6f, kendall %.3f on %d rows", report.qini, report.kendall, ds.n)
    return 0
