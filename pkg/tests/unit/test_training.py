"""Unit tests for SGD training, best-epoch selection and hyper-parameter tuning."""

from dataclasses import replace

import numpy as np
import pytest

import training
from data import SplitPlan, SyntheticSpec, UpliftDataset, generate_parametric, train_valid_split
from exceptions import DivergedError, NumericError, TuningError, UnsupportedPropensityError
from losses import LossVariant
from metrics import qini_coefficient, qini_curve
from model import Parameters, init_parameters, loss_and_gradient, objective_value
from numerics import finite_difference_gradient, relative_error
from training import (
    ALPHA_GRID,
    LEARNING_RATE_GRID,
    TrainConfig,
    select,
    summarize_folds,
    train,
    tune_alpha,
    tune_learning_rate,
)
from utils import child_seeds

pytestmark = pytest.mark.unit


@pytest.fixture
def parts():
    """Small parametric train and validation parts."""
    ds, _ = generate_parametric(SyntheticSpec.default(n=240, p=3, seed=5, uplift_magnitude=1.0))
    return train_valid_split(ds, 0.6, seed=1)


@pytest.fixture
def tiny_config():
    """A narrow network trained for a few epochs."""
    return TrainConfig(
        variant=LossVariant.TO,
        alpha=0.5,
        learning_rate=0.1,
        epochs=4,
        batch_size=32,
        seed=3,
        hidden_widths=(6, 4),
        linear_prefix=1,
        qini_grid=20,
    )


class TestTrainConfig:
    """Tests for training settings."""

    def test_defaults(self):
        """Declared defaults."""
        config = TrainConfig()
        assert config.learning_rate == 0.03
        assert config.batch_size == 256
        assert config.epochs == 200
        assert config.hidden_widths == (200, 200, 300, 100, 50, 10)

    def test_dict_round_trip(self, tiny_config):
        """Serialised settings rebuild an equal config."""
        assert TrainConfig.from_dict(tiny_config.to_dict()) == tiny_config

    def test_invalid_values(self):
        """Out-of-range settings are rejected."""
        with pytest.raises(ValueError):
            TrainConfig(alpha=1.2)
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=-0.1)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)


class TestTrain:
    """Tests for minibatch SGD with best-on-validation selection."""

    def test_zero_learning_rate_keeps_initialisation(self, parts, tiny_config):
        """With a zero step the returned parameters are the initial ones."""
        train_ds, valid_ds = parts
        config = replace(tiny_config, learning_rate=0.0)
        tm = train(config, train_ds, valid_ds)
        initial = init_parameters(tm.arch, child_seeds(config.seed, 2)[0])
        for a, b in zip(tm.params.arrays(), initial.arrays(), strict=True):
            assert np.array_equal(a, b)

    def test_single_step_matches_finite_differences(self, parts, tiny_config):
        """One full-batch step equals theta0 - lr * numeric gradient."""
        train_ds, valid_ds = parts
        config = replace(tiny_config, epochs=1, batch_size=train_ds.n, standardize=False)
        tm = train(config, train_ds, valid_ds)
        theta0 = init_parameters(tm.arch, child_seeds(config.seed, 2)[0])

        def objective(theta):
            return objective_value(
                Parameters.from_arrays(theta), tm.arch, train_ds, config.objective
            )

        numeric = finite_difference_gradient(objective, theta0.arrays())
        for before, after, n in zip(theta0.arrays(), tm.params.arrays(), numeric, strict=True):
            step = (before - after) / config.learning_rate
            assert np.max(np.abs(step - n)) < 1e-7
            mask = np.abs(n) > 1e-4
            if mask.any():
                assert np.max(relative_error(step, n)[mask]) < 1e-5

    def test_deterministic(self, parts, tiny_config):
        """Same config and data give bit-identical parameters."""
        a, b = train(tiny_config, *parts), train(tiny_config, *parts)
        for x, y in zip(a.params.arrays(), b.params.arrays(), strict=True):
            assert np.array_equal(x, y)
        assert a.best_epoch == b.best_epoch

    def test_best_epoch_bookkeeping(self, parts, tiny_config):
        """The kept snapshot is the first epoch with the maximum validation Qini."""
        train_ds, valid_ds = parts
        tm = train(tiny_config, train_ds, valid_ds)
        scores = [record.valid_qini for record in tm.history]
        assert len(scores) == tiny_config.epochs
        assert tm.best_valid_qini == max(scores)
        assert tm.best_epoch == scores.index(max(scores)) + 1
        curve = qini_curve(
            tm.predict_uplift(valid_ds.features),
            valid_ds.treatment,
            valid_ds.outcome,
            tiny_config.qini_grid,
        )
        assert qini_coefficient(curve) == pytest.approx(tm.best_valid_qini)

    def test_history_frame(self, parts, tiny_config):
        """One row per epoch with the loss and validation columns."""
        frame = train(tiny_config, *parts).history_frame()
        assert len(frame) == tiny_config.epochs
        assert {"epoch", "train_loss", "valid_qini", "valid_uplift_std"} <= set(frame.columns)

    def test_conditional_means_are_probabilities(self, parts, tiny_config):
        """The fitted model exposes (mu0, mu1) for raw covariates."""
        train_ds, valid_ds = parts
        mu0, mu1 = train(tiny_config, train_ds, valid_ds).conditional_means(valid_ds.features)
        assert mu0.shape == mu1.shape == (valid_ds.n,)
        assert np.all((mu0 > 0) & (mu0 < 1) & (mu1 > 0) & (mu1 < 1))

    def test_indirect_needs_half_propensity(self, parts, tiny_config):
        """IE refuses unbalanced data."""
        train_ds, valid_ds = parts
        skewed = UpliftDataset(
            train_ds.features, train_ds.treatment, train_ds.outcome, propensity=0.3
        )
        config = replace(tiny_config, variant=LossVariant.IE)
        with pytest.raises(UnsupportedPropensityError):
            train(config, skewed, valid_ds)

    def test_divergence_reports_epoch_and_rate(self, parts, tiny_config, mocker):
        """A numeric failure inside an epoch becomes a divergence error."""
        calls = {"n": 0}

        def failing(*args, **kwargs):
            calls["n"] += 1
            if calls["n"] > 5:
                raise NumericError("non-finite composite loss")
            return loss_and_gradient(*args, **kwargs)

        mocker.patch.object(training, "loss_and_gradient", side_effect=failing)
        with pytest.raises(DivergedError) as exc_info:
            train(tiny_config, *parts)
        # 144 training rows in batches of 32 give 5 steps per epoch.
        assert exc_info.value.details == {"epoch": 2, "learning_rate": 0.1}
        assert exc_info.value.exit_code == 3


class TestSelect:
    """Tests for the confidence-interval selection rule."""

    def test_planted_values(self):
        """alpha=0.2 has the higher mean but its interval crosses zero."""
        candidates = [summarize_folds(0.1, [0.3, 0.3]), summarize_folds(0.2, [0.5, -0.1])]
        assert candidates[1].ci_low == pytest.approx(0.2 - 1.96 * 0.3)
        assert select(candidates) == (0.1, False)

    def test_highest_mean_among_qualified(self):
        """Among positive lower bounds the highest mean wins."""
        candidates = [
            summarize_folds(0.0, [0.10, 0.11]),
            summarize_folds(0.5, [0.20, 0.21]),
            summarize_folds(1.0, [0.15, 0.16]),
        ]
        assert select(candidates) == (0.5, False)

    def test_zero_folds_never_beat_positive_bound(self):
        """A candidate scoring exactly zero does not qualify."""
        candidates = [summarize_folds(0.3, [0.0, 0.0]), summarize_folds(0.4, [0.01, 0.02])]
        assert select(candidates) == (0.4, False)

    def test_fallback_takes_greatest_lower_bound(self):
        """With no positive lower bound the greatest one is taken and flagged."""
        candidates = [summarize_folds(0.1, [0.5, -0.5]), summarize_folds(0.2, [0.0, -0.1])]
        assert select(candidates) == (0.2, True)

    def test_ineligible_candidates_are_skipped(self):
        """Candidates with fewer than two folds are excluded."""
        candidates = [summarize_folds(0.1, [0.9], failures=1), summarize_folds(0.2, [0.1, 0.2])]
        assert not candidates[0].eligible
        assert select(candidates) == (0.2, False)

    def test_no_eligible_candidate(self):
        """Nothing to compare is a tuning error."""
        with pytest.raises(TuningError):
            select([summarize_folds(0.1, [], failures=2)])


class TestTuning:
    """Tests for the repeated-split tuning protocol."""

    @pytest.fixture
    def dataset(self):
        ds, _ = generate_parametric(SyntheticSpec.default(n=200, p=3, seed=8))
        return ds

    @pytest.fixture
    def fast_config(self):
        return TrainConfig(
            variant=LossVariant.TO,
            learning_rate=0.1,
            epochs=2,
            batch_size=64,
            hidden_widths=(4,),
            linear_prefix=0,
            qini_grid=10,
        )

    def test_grids(self):
        """Eleven alphas from 0 to 1 and five learning rates around 0.03."""
        assert len(ALPHA_GRID) == 11
        assert ALPHA_GRID[0] == 0.0
        assert ALPHA_GRID[-1] == 1.0
        assert LEARNING_RATE_GRID == (0.3, 0.1, 0.03, 0.01, 0.003)

    def test_grid_order_does_not_matter(self, dataset, fast_config):
        """Evaluating the grid in reverse gives the same per-candidate results."""
        plan = SplitPlan(repeats=2, seed=4)
        forward = tune_alpha(dataset, plan, fast_config, grid=(0.0, 0.5, 1.0))
        backward = tune_alpha(dataset, plan, fast_config, grid=(1.0, 0.5, 0.0))
        by_value = {c.value: c.fold_values for c in forward.candidates}
        assert by_value == {c.value: c.fold_values for c in backward.candidates}
        assert forward.selected == backward.selected

    def test_result_shape(self, dataset, fast_config):
        """One fold record per (value, fold) and a selection from the grid."""
        result = tune_learning_rate(dataset, SplitPlan(repeats=2), fast_config, grid=(0.1, 0.01))
        assert result.parameter == "learning_rate"
        assert result.selected in (0.1, 0.01)
        frame = result.to_frame()
        assert list(frame.columns) == ["learning_rate", "fold", "qini", "error"]
        assert len(frame) == 4
        summary = result.to_dict()
        assert summary["confidence_z"] == 1.96
        assert len(summary["candidates"]) == 2

    def test_failed_folds_are_recorded(self, dataset, fast_config):
        """When every fold fails there is nothing to select."""
        skewed = UpliftDataset(dataset.features, dataset.treatment, dataset.outcome, 0.3)
        config = replace(fast_config, variant=LossVariant.IE)
        with pytest.raises(TuningError):
            tune_alpha(skewed, SplitPlan(repeats=2), config, grid=(0.0, 0.5))

    def test_needs_two_folds(self, dataset, fast_config):
        """A single fold has no confidence interval."""
        with pytest.raises(ValueError):
            tune_alpha(dataset, SplitPlan(repeats=1), fast_config)

    def test_learning_rate_grid_must_be_positive(self, dataset, fast_config):
        """A zero learning rate would never move."""
        with pytest.raises(ValueError):
            tune_learning_rate(dataset, SplitPlan(repeats=2), fast_config, grid=(0.1, 0.0))
