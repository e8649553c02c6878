"""tune: pick alpha, then the learning rate, by repeated train/validation splits."""

import logging
from dataclasses import replace
from pathlib import Path

from commands.common import load_experiment_data, write_frame
from config import ExperimentConfig
from data import balance_treatment, fold_pairs, holdout_split
from exceptions import EXIT_FALLBACK
from losses import LossVariant
from metrics import evaluate
from training import save_model, train, tune_alpha, tune_learning_rate
from utils import write_json

logger = logging.getLogger(__name__)


def run(config: ExperimentConfig) -> int:
    out = Path(config.out)
    ds, _ = load_experiment_data(config)
    plan = config.split_plan()
    holdout, rest = holdout_split(ds, plan)
    if config.variant == LossVariant.IE and rest.propensity != 0.5:
        logger.info("rebalancing tuning rows (propensity %.4f)", rest.propensity)
        rest = balance_treatment(rest, config.seed, config.balance_method)

    base = config.train_config(config.variant, config.alpha, config.seed)
    alpha_result = tune_alpha(rest, plan, base, workers=config.workers)
    tuned = replace(base, alpha=alpha_result.selected)
    rate_result = tune_learning_rate(rest, plan, tuned, workers=config.workers)
    tuned = replace(tuned, learning_rate=rate_result.selected)

    # Refit the selected configuration on the first fold and score the untouched holdout.
    train_ds, valid_ds = fold_pairs(rest, plan)[0]
    final = train(tuned, train_ds, valid_ds)
    report, _ = evaluate(
        final.predict_uplift(holdout.features),
        holdout.treatment,
        holdout.outcome,
        config.qini_grid,
        config.kendall_bins,
        literal=config.qini_literal,
    )
    save_model(final, out / "model.txt", extra=config.as_dict())

    write_frame(alpha_result.to_frame(), out / "tune_alpha.csv", config)
    write_frame(rate_result.to_frame(), out / "tune_learning_rate.csv", config)
    fallback = alpha_result.fallback or rate_result.fallback
    write_json(
        out / "tune_summary.json",
        {
            "config": config.as_dict(),
            "variant": str(tuned.variant),
            "alpha": alpha_result.to_dict(),
            "learning_rate": rate_result.to_dict(),
            "selected": {"alpha": tuned.alpha, "learning_rate": tuned.learning_rate},
            "fallback": fallback,
            "holdout": {"rows": holdout.n, **report.to_dict()},
        },
    )
    logger.info(
        "selected alpha=%g learning_rate=%g; holdout qini %.6f",
        tuned.alpha,
        tuned.learning_rate,
        report.qini,
    )
    return EXIT_FALLBACK if fallback else 0
