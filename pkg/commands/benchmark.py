"""benchmark: repeated train/validation runs of every model, aggregated as mean and 2 S.E."""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from baselines import fit_interaction, fit_two_model, save_baseline
from commands.common import (
    DataSource,
    UpliftScorer,
    data_source,
    load_experiment_data,
    write_frame,
)
from config import ExperimentConfig
from data import SplitPlan, UpliftDataset, balance_treatment, holdout_indices, shuffle_indices
from exceptions import UpliftError
from losses import LossVariant
from metrics import EvalReport, QiniCurve, aggregate, evaluate
from numerics import Vector
from training import TrainConfig, TrainedModel, save_model, train
from utils import write_json

logger = logging.getLogger(__name__)

TWIN_MODELS = ("TO", "IE", "L1")
SPLITS = ("train", "valid", "holdout")


@dataclass(frozen=True, eq=False)
class BenchmarkContext:
    """Everything a run needs; shared read-only with the worker processes.

    With ``regenerate`` set, run r draws its own dataset and truth from
    ``data_seed + r`` instead of re-splitting ``dataset``.
    """

    dataset: UpliftDataset
    truth: Vector | None
    regenerate: DataSource | None
    data_seed: int
    holdout_plan: SplitPlan | None
    models: tuple[str, ...]
    train_configs: dict[str, TrainConfig]
    train_fraction: float
    balance_method: str
    qini_grid: int
    kendall_bins: int
    qini_literal: bool


@dataclass
class ModelOutcome:
    model: str
    reports: dict[str, EvalReport] = field(default_factory=dict)
    valid_curve: QiniCurve | None = None
    fitted: UpliftScorer | None = None
    error: str | None = None


@dataclass
class RunOutcome:
    run: int
    seed: int
    models: list[ModelOutcome]


_context: BenchmarkContext | None = None


def _init_worker(context: BenchmarkContext) -> None:
    global _context
    _context = context


def _fit(
    name: str,
    context: BenchmarkContext,
    train_ds: UpliftDataset,
    valid_ds: UpliftDataset,
    seed: int,
) -> UpliftScorer | None:
    if name in TWIN_MODELS:
        config = replace(context.train_configs[name], seed=seed)
        if config.variant is LossVariant.IE and train_ds.propensity != 0.5:
            train_ds = balance_treatment(train_ds, seed, context.balance_method)
        return train(config, train_ds, valid_ds)
    if name == "two_model":
        return fit_two_model(train_ds)
    if name == "interaction":
        return fit_interaction(train_ds)
    return None


def _run_parts(
    context: BenchmarkContext, run: int, seed: int
) -> tuple[dict[str, UpliftDataset], dict[str, Vector]]:
    """Train and validation parts of the non-holdout rows, then the holdout, with their truth."""
    ds, truth = context.dataset, context.truth
    if context.regenerate is not None:
        ds, truth = context.regenerate.draw(context.data_seed + run)
    rest_idx = np.arange(ds.n)
    holdout_idx = None
    if context.holdout_plan is not None:
        holdout_idx, rest_idx = holdout_indices(ds.n, context.holdout_plan)
    train_pos, valid_pos = shuffle_indices(rest_idx.size, context.train_fraction, seed)
    train_idx, valid_idx = rest_idx[train_pos], rest_idx[valid_pos]

    parts = {"train": ds.subset(train_idx), "valid": ds.subset(valid_idx)}
    truths: dict[str, Vector] = {}
    if truth is not None:
        truths = {"train": truth[train_idx], "valid": truth[valid_idx]}
    if holdout_idx is not None:
        parts["holdout"] = ds.subset(holdout_idx)
        if truth is not None:
            truths["holdout"] = truth[holdout_idx]
    return parts, truths


def run_once(context: BenchmarkContext, run: int, seed: int) -> RunOutcome:
    """Fresh split of the non-holdout rows, then fit and score every model."""
    try:
        parts, truths = _run_parts(context, run, seed)
    except UpliftError as e:
        error = f"{type(e).__name__}: {e.message}"
        logger.warning("run %d (seed %d) drew no usable data: %s", run, seed, e.message)
        failed = [ModelOutcome(name, error=error) for name in context.models]
        return RunOutcome(run=run, seed=seed, models=failed)

    outcomes = []
    for name in context.models:
        outcome = ModelOutcome(name)
        try:
            for split_name, part in parts.items():
                part.require_both_arms(f"{split_name} part")
            outcome.fitted = _fit(name, context, parts["train"], parts["valid"], seed)
            for split_name, part in parts.items():
                if name == "oracle":
                    scores = truths[split_name]
                else:
                    scores = outcome.fitted.predict_uplift(part.features)
                report, curve = evaluate(
                    scores,
                    part.treatment,
                    part.outcome,
                    context.qini_grid,
                    context.kendall_bins,
                    literal=context.qini_literal,
                )
                outcome.reports[split_name] = report
                if split_name == "valid":
                    outcome.valid_curve = curve
        except UpliftError as e:
            outcome = ModelOutcome(name, error=f"{type(e).__name__}: {e.message}")
            logger.warning("run %d (seed %d) %s failed: %s", run, seed, name, e.message)
        outcomes.append(outcome)
    logger.info("finished run %d (seed %d)", run, seed)
    return RunOutcome(run=run, seed=seed, models=outcomes)


def _run_in_worker(run: int, seed: int) -> RunOutcome:
    return run_once(_context, run, seed)


def _run_all(context: BenchmarkContext, tasks: list[tuple[int, int]], workers: int):
    runs = [run for run, _ in tasks]
    seeds = [seed for _, seed in tasks]
    if workers <= 1 or len(tasks) == 1:
        yield from (run_once(context, run, seed) for run, seed in tasks)
        return
    with ProcessPoolExecutor(
        max_workers=min(workers, len(tasks)), initializer=_init_worker, initargs=(context,)
    ) as executor:
        yield from executor.map(_run_in_worker, runs, seeds)


def _clean(value: float) -> float | None:
    return value if math.isfinite(value) else None


def _aggregate_rows(
    per_model: dict[str, dict[str, list[EvalReport]]], runs: int
) -> list[dict[str, Any]]:
    rows = []
    for model, splits in per_model.items():
        for split_name in SPLITS:
            if split_name not in splits:
                continue
            reports = splits[split_name]
            if len(reports) >= 2:
                summary = aggregate(reports)
            elif reports:
                summary = replace(reports[0], qini_se2=math.nan, kendall_se2=math.nan)
            else:
                summary = None
            rows.append(
                {
                    "model": model,
                    "split": split_name,
                    "qini": summary.qini if summary else math.nan,
                    "qini_2se": summary.qini_se2 if summary else math.nan,
                    "kendall": summary.kendall if summary else math.nan,
                    "kendall_2se": summary.kendall_se2 if summary else math.nan,
                    "runs_ok": len(reports),
                    "runs": runs,
                    "complete": len(reports) == runs,
                    "flags": ";".join(summary.flags) if summary else "",
                }
            )
    return rows


def _per_run_row(
    outcome: RunOutcome,
    model: str,
    split_name: str = "",
    report: EvalReport | None = None,
    error: str = "",
) -> dict[str, Any]:
    return {
        "run": outcome.run,
        "seed": outcome.seed,
        "model": model,
        "split": split_name,
        "qini": report.qini if report else np.nan,
        "kendall": report.kendall if report else np.nan,
        "flags": ";".join(report.flags) if report else "",
        "error": error,
    }


def _save_fitted(fitted: UpliftScorer, path: Path, config: ExperimentConfig) -> None:
    if isinstance(fitted, TrainedModel):
        save_model(fitted, path, extra=config.as_dict())
    else:
        save_baseline(fitted, path, extra=config.as_dict())


def run(config: ExperimentConfig) -> int:
    out = Path(config.out)
    source = data_source(config)
    ds, truth = load_experiment_data(config, source)
    models = tuple(config.models)
    if "oracle" in models and truth is None:
        logger.warning("no true uplift available; skipping the oracle scorer")
        models = tuple(m for m in models if m != "oracle")

    holdout_plan = None
    if config.holdout_fraction > 0.0:
        holdout_plan = SplitPlan(
            holdout_fraction=config.holdout_fraction,
            train_fraction_of_rest=config.train_fraction,
            repeats=1,
            seed=config.seed,
        )
        holdout_idx, _ = holdout_indices(ds.n, holdout_plan)
        ds.subset(holdout_idx).require_both_arms("holdout part")
    if config.regenerate:
        logger.info("drawing a fresh dataset per run from data_seed %d + run", config.data_seed)

    alphas = {"TO": config.alpha_to, "L1": config.alpha_to, "IE": config.alpha_ie}
    context = BenchmarkContext(
        dataset=ds,
        truth=truth,
        regenerate=source if config.regenerate else None,
        data_seed=config.data_seed,
        holdout_plan=holdout_plan,
        models=models,
        train_configs={
            name: config.train_config(name, alphas[name], config.seed)
            for name in models
            if name in TWIN_MODELS
        },
        train_fraction=config.train_fraction,
        balance_method=config.balance_method,
        qini_grid=config.qini_grid,
        kendall_bins=config.kendall_bins,
        qini_literal=config.qini_literal,
    )
    tasks = [(r, config.seed + r * config.seed_stride) for r in range(config.runs)]

    per_run_rows: list[dict[str, Any]] = []
    failures: list[dict[str, Any]] = []
    per_model: dict[str, dict[str, list[EvalReport]]] = {m: {} for m in models}
    best: dict[str, tuple[float, int, ModelOutcome]] = {}
    for outcome in _run_all(context, tasks, config.workers):
        for result in outcome.models:
            if result.error:
                failures.append(
                    {
                        "run": outcome.run,
                        "seed": outcome.seed,
                        "model": result.model,
                        "error": result.error,
                    }
                )
                per_run_rows.append(_per_run_row(outcome, result.model, error=result.error))
                continue
            for split_name, report in result.reports.items():
                per_model[result.model].setdefault(split_name, []).append(report)
                per_run_rows.append(_per_run_row(outcome, result.model, split_name, report))
            valid_qini = result.reports["valid"].qini
            if result.model not in best or valid_qini > best[result.model][0]:
                best[result.model] = (valid_qini, outcome.run, result)

    for model in models:
        for split_name in ("train", "valid") + (("holdout",) if holdout_plan is not None else ()):
            per_model[model].setdefault(split_name, [])
    aggregate_rows = _aggregate_rows(per_model, config.runs)

    write_frame(pd.DataFrame(per_run_rows), out / "per_run.csv", config)
    write_frame(pd.DataFrame(aggregate_rows), out / "aggregate.csv", config)
    write_json(
        out / "aggregate.json",
        {
            "config": config.as_dict(),
            "results": [
                {k: _clean(v) if isinstance(v, float) else v for k, v in row.items()}
                for row in aggregate_rows
            ],
            "best_runs": {model: entry[1] for model, entry in best.items()},
            "failures": failures,
        },
    )
    for model, (_, run_index, result) in best.items():
        write_frame(result.valid_curve.to_frame(), out / f"curve_{model}.csv", config)
        if isinstance(result.fitted, TrainedModel):
            write_frame(result.fitted.history_frame(), out / f"history_{model}.csv", config)
        if result.fitted is not None:
            _save_fitted(result.fitted, out / f"model_{model}.txt", config)
        logger.info("best %s run: %d", model, run_index)

    for row in aggregate_rows:
        if row["split"] == "valid":
            logger.info(
                "%-12s valid qini %.6f +/- %.6f, kendall %.3f +/- %.3f (%d/%d runs)",
                row["model"],
                row["qini"],
                row["qini_2se"],
                row["kendall"],
                row["kendall_2se"],
                row["runs_ok"],
                row["runs"],
            )
    return 0
