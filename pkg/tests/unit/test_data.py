"""Unit tests for dataset ingestion, splitting and the synthetic generators."""

import numpy as np
import pytest

from baselines import fit_two_model
from data import (
    SplitPlan,
    Standardizer,
    SyntheticSpec,
    UpliftDataset,
    balance_treatment,
    baseline_intercept_for_rate,
    draw_outcomes,
    fold_pairs,
    generate_bootstrap,
    generate_parametric,
    holdout_split,
    load_csv,
    load_truth,
    split,
    transform_outcome,
    write_csv,
    write_truth,
)
from exceptions import (
    FeatureMismatchError,
    GenerationError,
    ParseError,
    StratificationError,
)

pytestmark = pytest.mark.unit


@pytest.fixture
def small_dataset():
    """Eight rows, two features, four treated."""
    rng = np.random.default_rng(11)
    return UpliftDataset(
        features=rng.normal(size=(8, 2)),
        treatment=np.array([1, 0, 1, 0, 1, 0, 1, 0], dtype=float),
        outcome=np.array([1, 0, 0, 1, 1, 0, 0, 0], dtype=float),
        propensity=0.5,
    )


@pytest.fixture
def balanced_dataset():
    """A hundred rows with alternating treatment and outcome."""
    rng = np.random.default_rng(5)
    treatment = np.tile([1.0, 0.0], 50)
    outcome = np.tile([1.0, 1.0, 0.0, 0.0], 25)
    return UpliftDataset(
        features=rng.normal(size=(100, 3)),
        treatment=treatment,
        outcome=outcome,
        propensity=0.5,
    )


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class TestUpliftDataset:
    """Tests for the dataset value type."""

    def test_counts_and_default_names(self, small_dataset):
        """Row counts and generated feature names."""
        assert small_dataset.n == 8
        assert small_dataset.p == 2
        assert small_dataset.n_treated == 4
        assert small_dataset.n_control == 4
        assert small_dataset.feature_names == ("x1", "x2")

    def test_arrays_are_read_only(self, small_dataset):
        """Stored arrays cannot be written through."""
        with pytest.raises(ValueError):
            small_dataset.outcome[0] = 0.0

    def test_inputs_are_copied(self):
        """Mutating the caller's array does not change the dataset."""
        outcome = np.array([1.0, 0.0])
        ds = UpliftDataset(np.zeros((2, 1)), np.array([1.0, 0.0]), outcome, 0.5)
        outcome[0] = 0.0
        assert ds.outcome[0] == 1.0

    def test_non_binary_treatment(self):
        """Treatment values other than 0 and 1 are refused."""
        with pytest.raises(ParseError, match="treatment"):
            UpliftDataset(np.zeros((2, 1)), np.array([1.0, 2.0]), np.array([1.0, 0.0]), 0.5)

    def test_empirical_ate(self, small_dataset):
        """Treated rate 2/4 minus control rate 1/4."""
        assert small_dataset.empirical_ate() == pytest.approx(0.25)

    def test_require_both_arms(self):
        """A part with only treated rows is a stratification error."""
        ds = UpliftDataset(np.zeros((2, 1)), np.ones(2), np.array([1.0, 0.0]), 0.5)
        with pytest.raises(StratificationError) as exc_info:
            ds.require_both_arms("train part")
        assert exc_info.value.details["part"] == "train part"
        assert exc_info.value.exit_code == 2


class TestLoadCsv:
    """Tests for CSV ingestion."""

    def test_reads_columns_in_any_order(self, tmp_path):
        """Outcome and treatment may sit anywhere; the rest are features."""
        path = _write(tmp_path / "d.csv", "outcome,a,treatment,b\n1,0.5,1,2\n0,1.5,0,3\n")
        ds = load_csv(path)
        assert ds.feature_names == ("a", "b")
        assert np.array_equal(ds.features, [[0.5, 2.0], [1.5, 3.0]])
        assert ds.propensity == pytest.approx(0.5)

    def test_comment_lines_are_skipped(self, tmp_path):
        """Lines starting with # carry metadata only."""
        path = _write(tmp_path / "d.csv", '# {"seed": 1}\nx,treatment,outcome\n1,1,0\n2,0,1\n')
        assert load_csv(path).n == 2

    def test_custom_column_names_and_propensity(self, tmp_path):
        """Column names and the propensity can be supplied."""
        path = _write(tmp_path / "d.csv", "x,w,conv\n1,1,0\n2,0,1\n3,0,0\n")
        ds = load_csv(path, outcome_col="conv", treatment_col="w", propensity=0.25)
        assert ds.propensity == 0.25
        assert ds.feature_names == ("x",)

    def test_missing_column(self, tmp_path):
        """A missing outcome column is named."""
        path = _write(tmp_path / "d.csv", "x,treatment\n1,1\n")
        with pytest.raises(ParseError, match="'outcome'"):
            load_csv(path)

    def test_non_numeric_cell_reports_row_and_column(self, tmp_path):
        """Rows are counted 1-based over data rows."""
        path = _write(tmp_path / "d.csv", "x,treatment,outcome\n1,1,0\nabc,0,1\n")
        with pytest.raises(ParseError) as exc_info:
            load_csv(path)
        assert exc_info.value.details == {"row": 2, "column": "x"}

    def test_non_binary_outcome(self, tmp_path):
        """An outcome of 2 is refused with its location."""
        path = _write(tmp_path / "d.csv", "x,treatment,outcome\n1,1,0\n2,0,2\n")
        with pytest.raises(ParseError) as exc_info:
            load_csv(path)
        assert exc_info.value.details == {"row": 2, "column": "outcome"}

    def test_missing_file(self, tmp_path):
        """A missing file is a parse error, not an OSError."""
        with pytest.raises(ParseError, match="not found"):
            load_csv(tmp_path / "absent.csv")

    def test_invalid_utf8_is_a_parse_error(self, tmp_path):
        """Undecodable bytes are reported with their data row."""
        path = tmp_path / "d.csv"
        path.write_bytes(b"x,treatment,outcome\n1,1,0\n\xff\xfe,0,1\n")
        with pytest.raises(ParseError, match="UTF-8") as exc_info:
            load_csv(path)
        assert exc_info.value.details["row"] == 2
        assert exc_info.value.exit_code == 2

    def test_ragged_row_reports_row(self, tmp_path):
        """A row with extra fields is located."""
        path = _write(tmp_path / "d.csv", "x,treatment,outcome\n1,1,0\n2,0,1,7,8\n")
        with pytest.raises(ParseError) as exc_info:
            load_csv(path)
        assert exc_info.value.details["row"] == 2

    def test_hash_inside_a_line_is_text(self, tmp_path):
        """Only lines that start with # are comments."""
        path = _write(
            tmp_path / "d.csv", "# note\nsize#cm,treatment,outcome\n1.5,1,0\n2.5,0,1\n"
        )
        ds = load_csv(path)
        assert ds.feature_names == ("size#cm",)
        assert np.array_equal(ds.features[:, 0], [1.5, 2.5])

    def test_byte_order_mark_is_dropped(self, tmp_path):
        """A UTF-8 BOM does not end up in the first column name."""
        path = tmp_path / "d.csv"
        path.write_bytes(b"\xef\xbb\xbfx,treatment,outcome\n1,1,0\n2,0,1\n")
        assert load_csv(path).feature_names == ("x",)

    def test_written_values_read_back_identically(self, tmp_path):
        """write_csv keeps every float bit-for-bit."""
        ds, _ = generate_parametric(SyntheticSpec.default(n=50, p=4, seed=3))
        path = tmp_path / "d.csv"
        write_csv(ds, path, header_comment="# {}\n")
        loaded = load_csv(path, propensity=0.5)
        assert np.array_equal(loaded.features, ds.features)
        assert np.array_equal(loaded.treatment, ds.treatment)
        assert np.array_equal(loaded.outcome, ds.outcome)
        assert loaded.feature_names == ds.feature_names


class TestTransformOutcome:
    """Tests for the transformed outcome."""

    def test_values_at_half_propensity(self, small_dataset):
        """Z is 2 for treated responders, -2 for control responders, else 0."""
        z = transform_outcome(small_dataset)
        assert np.array_equal(z, [2.0, 0.0, 0.0, -2.0, 2.0, 0.0, 0.0, 0.0])

    def test_quarter_propensity(self):
        """A treated responder at e = 1/4 has Z = 4."""
        ds = UpliftDataset(np.zeros((2, 1)), np.array([1.0, 0.0]), np.array([1.0, 1.0]), 0.25)
        assert np.allclose(transform_outcome(ds), [4.0, -4.0 / 3.0])

    def test_unbiased_at_fixed_covariates(self):
        """Redrawing (T, Y) at one x, the mean of Z converges to the true uplift."""
        spec = SyntheticSpec.default(n=10, p=4, seed=2, uplift_magnitude=1.0)
        x = np.random.default_rng(0).normal(size=(1, 4))
        truth = spec.true_uplift(x)[0]
        draws = 10_000
        rng = np.random.default_rng(1)
        features = np.repeat(x, draws, axis=0)
        treatment = (rng.random(draws) < 0.5).astype(float)
        outcome = draw_outcomes(features, treatment, spec, rng)
        z = transform_outcome(UpliftDataset(features, treatment, outcome, 0.5))
        se = z.std(ddof=1) / np.sqrt(draws)
        assert abs(z.mean() - truth) < 3.0 * se

    def test_mean_matches_ate_at_half_propensity(self, balanced_dataset):
        """With equal arm sizes the mean of Z equals the empirical ATE."""
        z = transform_outcome(balanced_dataset)
        assert z.mean() == pytest.approx(balanced_dataset.empirical_ate())


class TestSplitting:
    """Tests for holdout and train/validation splits."""

    def test_default_sizes_for_hundred_rows(self, balanced_dataset):
        """30 holdout rows, then 42 train and 28 validation rows per fold."""
        holdout, folds = split(balanced_dataset, SplitPlan(repeats=3, seed=1))
        assert holdout.n == 30
        assert len(folds) == 3
        for train_part, valid_part in folds:
            assert train_part.n == 42
            assert valid_part.n == 28

    def test_same_seed_same_split(self, balanced_dataset):
        """Splits are a pure function of the seed."""
        plan = SplitPlan(repeats=2, seed=7)
        first, second = fold_pairs(balanced_dataset, plan), fold_pairs(balanced_dataset, plan)
        for (a_train, a_valid), (b_train, b_valid) in zip(first, second, strict=True):
            assert np.array_equal(a_train.features, b_train.features)
            assert np.array_equal(a_valid.features, b_valid.features)

    def test_folds_differ(self, balanced_dataset):
        """Different folds shuffle differently."""
        (a, _), (b, _) = fold_pairs(balanced_dataset, SplitPlan(repeats=2, seed=7))
        assert not np.array_equal(a.features, b.features)

    def test_holdout_is_disjoint_from_rest(self, balanced_dataset):
        """Holdout rows never appear in the rest."""
        holdout, rest = holdout_split(balanced_dataset, SplitPlan(seed=2))
        holdout_rows = {tuple(row) for row in holdout.features}
        rest_rows = {tuple(row) for row in rest.features}
        assert holdout_rows.isdisjoint(rest_rows)
        assert holdout.n + rest.n == balanced_dataset.n

    def test_single_arm_part_is_refused(self):
        """A split part without control rows raises."""
        treatment = np.array([1.0] * 9 + [0.0])
        ds = UpliftDataset(np.arange(10.0)[:, None], treatment, np.zeros(10), 0.5)
        with pytest.raises(StratificationError):
            fold_pairs(ds, SplitPlan(repeats=1, seed=3))

    def test_fractions_must_lie_in_unit_interval(self):
        """Fractions of 0 or 1 are rejected."""
        with pytest.raises(ValueError):
            SplitPlan(holdout_fraction=0.0)
        with pytest.raises(ValueError):
            SplitPlan(train_fraction_of_rest=1.0)


class TestBalanceTreatment:
    """Tests for arm rebalancing."""

    @pytest.fixture
    def skewed(self):
        treatment = np.array([1.0] * 30 + [0.0] * 10)
        return UpliftDataset(np.arange(40.0)[:, None], treatment, np.zeros(40), 0.75)

    def test_undersample(self, skewed):
        """The majority arm shrinks to the minority size."""
        balanced = balance_treatment(skewed, seed=0)
        assert balanced.n_treated == balanced.n_control == 10
        assert balanced.propensity == 0.5

    def test_oversample(self, skewed):
        """The minority arm grows to the majority size."""
        balanced = balance_treatment(skewed, seed=0, method="oversample")
        assert balanced.n_treated == balanced.n_control == 30

    def test_unknown_method(self, skewed):
        """Only the two resampling methods exist."""
        with pytest.raises(ValueError):
            balance_treatment(skewed, seed=0, method="smote")


class TestStandardizer:
    """Tests for feature standardisation."""

    def test_zero_mean_unit_scale(self, balanced_dataset):
        """Fitted columns are centred and scaled."""
        scaled = Standardizer.fit(balanced_dataset.features).transform(balanced_dataset.features)
        assert np.allclose(scaled.mean(axis=0), 0.0)
        assert np.allclose(scaled.std(axis=0), 1.0)

    def test_constant_column_is_not_scaled(self):
        """A zero-variance column keeps scale 1."""
        standardizer = Standardizer.fit(np.array([[2.0], [2.0]]))
        assert standardizer.scale[0] == 1.0
        assert np.array_equal(standardizer.transform(np.array([[3.0]])), [[1.0]])

    def test_remembers_feature_names(self, balanced_dataset):
        """Names passed at fit time survive a dict round trip."""
        standardizer = Standardizer.fit(balanced_dataset.features, balanced_dataset.feature_names)
        restored = Standardizer.from_dict(standardizer.to_dict())
        assert restored.feature_names == ("x1", "x2", "x3")
        assert np.array_equal(restored.mean, standardizer.mean)

    def test_align_reorders_columns_by_name(self, balanced_dataset):
        """Columns given in another order are put back in fitted order."""
        standardizer = Standardizer.fit(balanced_dataset.features, balanced_dataset.feature_names)
        shuffled = UpliftDataset(
            balanced_dataset.features[:, [2, 0, 1]],
            balanced_dataset.treatment,
            balanced_dataset.outcome,
            0.5,
            feature_names=("x3", "x1", "x2"),
        )
        aligned = standardizer.align(shuffled)
        assert aligned.feature_names == ("x1", "x2", "x3")
        assert np.array_equal(aligned.features, balanced_dataset.features)

    def test_align_refuses_other_columns(self, balanced_dataset):
        """A column the model never saw is a data error naming it."""
        standardizer = Standardizer.fit(balanced_dataset.features, ("a", "b", "c"))
        with pytest.raises(FeatureMismatchError, match="missing") as exc_info:
            standardizer.align(balanced_dataset)
        assert exc_info.value.exit_code == 2

    def test_align_without_names_checks_width(self, balanced_dataset):
        """An unnamed standardizer still refuses a different column count."""
        with pytest.raises(FeatureMismatchError):
            Standardizer.identity(2).align(balanced_dataset)

    def test_transform_checks_width(self):
        """Too many columns are a data error, not a broadcasting failure."""
        with pytest.raises(FeatureMismatchError, match="expects 2"):
            Standardizer.identity(2).transform(np.zeros((3, 4)))


class TestParametricGenerator:
    """Tests for the logistic-link generator."""

    def test_reproducible_from_seed(self):
        """The same generator seed draws the same data."""
        first, truth_a = generate_parametric(SyntheticSpec.default(n=200, p=5, seed=9))
        second, truth_b = generate_parametric(SyntheticSpec.default(n=200, p=5, seed=9))
        assert np.array_equal(first.features, second.features)
        assert np.array_equal(first.outcome, second.outcome)
        assert np.array_equal(truth_a, truth_b)

    def test_truth_is_difference_of_conditional_means(self):
        """True uplift lies in (-1, 1) and equals m1 - m0."""
        spec = SyntheticSpec.default(n=100, p=4, seed=1)
        ds, truth = generate_parametric(spec)
        m0, m1 = spec.conditional_means(ds.features)
        assert np.allclose(truth, m1 - m0)
        assert np.all(np.abs(truth) < 1.0)

    def test_sparsity_sets_active_interactions(self):
        """ceil(sparsity * p) interaction coefficients are nonzero."""
        spec = SyntheticSpec.default(n=10, p=20, seed=0, sparsity=0.1)
        assert np.count_nonzero(spec.uplift_coeffs) == 2

    def test_baseline_rate_is_met(self):
        """The control response rate is close to the requested base rate."""
        spec = SyntheticSpec.default(n=20_000, p=10, seed=4, baseline_rate=0.2)
        ds, _ = generate_parametric(spec)
        assert ds.control_rate() == pytest.approx(0.2, abs=0.02)

    def test_intercept_solves_rate_without_spread(self):
        """With no spread the intercept is the logit of the rate."""
        assert baseline_intercept_for_rate(0.25, 0.0) == pytest.approx(np.log(1.0 / 3.0))

    def test_balanced_assignment(self):
        """Treatment is assigned with probability one half."""
        ds, _ = generate_parametric(SyntheticSpec.default(n=10_000, p=2, seed=2))
        assert ds.propensity == 0.5
        assert ds.n_treated / ds.n == pytest.approx(0.5, abs=0.03)

    def test_empirical_ate_matches_mean_truth(self):
        """The observed rate difference estimates the mean true uplift within 3 S.E."""
        spec = SyntheticSpec.default(n=20_000, p=5, seed=12, uplift_magnitude=1.0)
        ds, truth = generate_parametric(spec)
        z = transform_outcome(ds)
        se = z.std() / np.sqrt(ds.n)
        assert abs(ds.empirical_ate() - truth.mean()) < 3.0 * se


class TestBootstrapGenerator:
    """Tests for the semi-synthetic bootstrap generator."""

    @pytest.fixture
    def source(self):
        ds, _ = generate_parametric(SyntheticSpec.default(n=300, p=3, seed=6))
        return ds

    def test_truth_comes_from_generator(self, source):
        """Resampled rows keep their covariates and carry the generator's uplift."""
        spec = SyntheticSpec.default(n=300, p=3, seed=6)
        sample = generate_bootstrap(source, spec, seed=1)
        assert sample.dataset.n == source.n
        assert np.allclose(sample.true_uplift, spec.true_uplift(sample.dataset.features))

    def test_reproducible(self, source):
        """Same seed, same sample."""
        spec = SyntheticSpec.default(n=300, p=3, seed=6)
        a, b = generate_bootstrap(source, spec, 4), generate_bootstrap(source, spec, 4)
        assert np.array_equal(a.dataset.outcome, b.dataset.outcome)

    def test_out_of_range_means(self, source):
        """Conditional means outside [0, 1] are refused."""

        class Broken:
            def conditional_means(self, features):
                return np.full(features.shape[0], 0.2), np.full(features.shape[0], 1.5)

        with pytest.raises(GenerationError):
            generate_bootstrap(source, Broken(), seed=0)

    def test_empirical_ate_matches_generator_uplift(self):
        """Redrawn responses estimate the mean of m1 - m0 within 3 S.E."""
        spec = SyntheticSpec.default(n=20_000, p=5, seed=14, uplift_magnitude=1.0)
        source, _ = generate_parametric(spec)
        sample = generate_bootstrap(source, spec, seed=2)
        se = transform_outcome(sample.dataset).std() / np.sqrt(source.n)
        assert abs(sample.dataset.empirical_ate() - sample.true_uplift.mean()) < 3.0 * se

    def test_zero_means_give_no_responses(self, source):
        """Means of exactly zero are clamped to a tiny rate and draw no positives."""

        class Silent:
            def conditional_means(self, features):
                zeros = np.zeros(features.shape[0])
                return zeros, zeros

        sample = generate_bootstrap(source, Silent(), seed=0)
        assert np.array_equal(sample.dataset.outcome, np.zeros(source.n))
        assert np.array_equal(sample.true_uplift, np.zeros(source.n))

    def test_width_mismatch_is_a_data_error(self, source):
        """A generator fitted on other columns is refused before drawing."""
        narrow = fit_two_model(generate_parametric(SyntheticSpec.default(n=200, p=2, seed=1))[0])
        with pytest.raises(FeatureMismatchError):
            generate_bootstrap(source, narrow, seed=0)


class TestTruthFile:
    """Tests for the true-uplift side file."""

    def test_round_trip(self, tmp_path):
        """Values survive writing with a comment line."""
        truth = np.array([0.1, -0.25, 1.0 / 3.0])
        write_truth(truth, tmp_path / "truth.csv", header_comment="# {}\n")
        assert np.array_equal(load_truth(tmp_path / "truth.csv", 3), truth)

    def test_row_count_mismatch(self, tmp_path):
        """The file must cover every dataset row."""
        write_truth(np.zeros(3), tmp_path / "truth.csv")
        with pytest.raises(ParseError, match="rows 0..3"):
            load_truth(tmp_path / "truth.csv", 4)

    def test_missing_column(self, tmp_path):
        """Both columns are required."""
        path = _write(tmp_path / "truth.csv", "row,uplift\n0,0.1\n")
        with pytest.raises(ParseError, match="true_uplift"):
            load_truth(path, 1)
