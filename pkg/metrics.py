"""Qini curve, Qini coefficient, Kendall uplift rank correlation and run aggregation."""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from exceptions import AggregationError, MetricError, StratificationError
from numerics import Vector, check_same_length
from utils import standard_error

logger = logging.getLogger(__name__)

DEFAULT_QINI_GRID = 100
DEFAULT_KENDALL_BINS = 10


@dataclass(frozen=True, eq=False)
class QiniCurve:
    """Incremental responses f(phi) on a uniform grid and Q(phi) = f(phi) - phi*f(1).

    ``interpolated`` lists grid indices whose targeted set had no control rows;
    their f value is interpolated from the neighbouring points.
    """

    grid: Vector
    f_values: Vector
    q_values: Vector
    interpolated: tuple[int, ...] = ()

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"phi": self.grid, "f": self.f_values, "q": self.q_values})


def _descending_order(predicted_uplift: Vector) -> np.ndarray:
    # Stable sort on the negated scores keeps ties in original row order.
    return np.argsort(-np.asarray(predicted_uplift, dtype=np.float64), kind="stable")


def qini_curve(
    predicted_uplift: Vector,
    t: Vector,
    y: Vector,
    grid_size: int = DEFAULT_QINI_GRID,
    literal: bool = False,
) -> QiniCurve:
    """Qini curve on the grid phi_k = k/K, k = 0..K.

    The default formula scales the control responses by the treated/control
    ratio inside the targeted set, so f(1) is the difference of response
    rates. ``literal=True`` divides control responses by the control count
    only.
    """
    n = check_same_length("qini_curve", predicted_uplift, t, y)
    if grid_size < 1:
        raise MetricError(f"grid size must be at least 1, got {grid_size}")
    n_treated = int(np.sum(t))
    if n_treated == 0 or n_treated == n:
        raise StratificationError("qini_curve rows", n_treated, n - n_treated)

    order = _descending_order(predicted_uplift)
    t_sorted = np.asarray(t, dtype=np.float64)[order]
    y_sorted = np.asarray(y, dtype=np.float64)[order]
    zero = np.zeros(1)
    treated_responses = np.concatenate([zero, np.cumsum(y_sorted * t_sorted)])
    control_responses = np.concatenate([zero, np.cumsum(y_sorted * (1.0 - t_sorted))])
    treated_counts = np.concatenate([zero, np.cumsum(t_sorted)])
    control_counts = np.concatenate([zero, np.cumsum(1.0 - t_sorted)])

    k = np.arange(grid_size + 1)
    grid = k / grid_size
    # ceil(k*n/K) in exact integer arithmetic.
    sizes = -(-(k * n) // grid_size)

    cr = control_responses[sizes]
    cc = control_counts[sizes]
    missing = (cc == 0) & (sizes > 0)
    safe_cc = np.where(cc == 0, 1.0, cc)
    if literal:
        f_values = (treated_responses[sizes] - cr / safe_cc) / n_treated
    else:
        f_values = (treated_responses[sizes] - cr * treated_counts[sizes] / safe_cc) / n_treated
    f_values[0] = 0.0

    interpolated = tuple(int(i) for i in np.flatnonzero(missing))
    if interpolated:
        known = ~missing
        f_values[missing] = np.interp(grid[missing], grid[known], f_values[known])
        logger.debug("qini curve: interpolated %d grid points", len(interpolated))

    q_values = f_values - grid * f_values[-1]
    return QiniCurve(grid=grid, f_values=f_values, q_values=q_values, interpolated=interpolated)


def qini_coefficient(curve: QiniCurve) -> float:
    """Trapezoid-rule area under Q(phi)."""
    widths = np.diff(curve.grid)
    heights = curve.q_values[1:] + curve.q_values[:-1]
    return float(0.5 * np.sum(widths * heights))


@dataclass(frozen=True, eq=False)
class KendallResult:
    value: float
    bins_used: int
    merged: bool
    predicted: Vector = field(repr=False)
    observed: Vector = field(repr=False)


def _bin_edges(sorted_scores: Vector, bins: int) -> list[int]:
    """Boundaries of ``bins`` near-equal rank bins over descending scores.

    A tie group cut by a boundary moves whole into the later, lower-score bin.
    """
    n = sorted_scores.shape[0]
    edges = [(b * n) // bins for b in range(bins + 1)]
    for b in range(bins - 1, 0, -1):
        e = min(edges[b], edges[b + 1])
        while 0 < e < n and sorted_scores[e] == sorted_scores[e - 1]:
            e -= 1
        edges[b] = e
    return edges


def _has_both_arms(t_bin: Vector) -> bool:
    treated = t_bin.sum()
    return 0 < treated < t_bin.shape[0]


def kendall_uplift_details(
    predicted_uplift: Vector, t: Vector, y: Vector, bins: int = DEFAULT_KENDALL_BINS
) -> KendallResult:
    """Kendall rank correlation between mean predicted and observed uplift per bin.

    A bin lacking an arm is merged with its neighbour toward the median bin
    and the statistic is recomputed with fewer bins.
    """
    n = check_same_length("kendall_uplift", predicted_uplift, t, y)
    if bins < 2:
        raise MetricError(f"kendall uplift needs at least 2 bins, got {bins}")
    if n < bins:
        raise MetricError(f"{n} rows cannot fill {bins} bins")
    order = _descending_order(predicted_uplift)
    scores = np.asarray(predicted_uplift, dtype=np.float64)[order]
    t_sorted = np.asarray(t, dtype=np.float64)[order]
    y_sorted = np.asarray(y, dtype=np.float64)[order]

    edges = _bin_edges(scores, bins)
    groups = [(edges[b], edges[b + 1]) for b in range(bins)]
    merged = False
    while True:
        bad = next(
            (i for i, (lo, hi) in enumerate(groups) if not _has_both_arms(t_sorted[lo:hi])),
            None,
        )
        if bad is None:
            break
        if len(groups) <= 2:
            raise MetricError("too few rows per arm to form two uplift bins")
        merged = True
        neighbour = bad + 1 if bad < (len(groups) - 1) / 2 else bad - 1
        lo = min(groups[bad][0], groups[neighbour][0])
        hi = max(groups[bad][1], groups[neighbour][1])
        first = min(bad, neighbour)
        groups[first : first + 2] = [(lo, hi)]

    predicted = np.array([scores[lo:hi].mean() for lo, hi in groups])
    observed = np.array(
        [
            y_sorted[lo:hi][t_sorted[lo:hi] == 1.0].mean()
            - y_sorted[lo:hi][t_sorted[lo:hi] == 0.0].mean()
            for lo, hi in groups
        ]
    )
    k = len(groups)
    upper = np.triu_indices(k, 1)
    agreement = np.sign(predicted[:, None] - predicted[None, :]) * np.sign(
        observed[:, None] - observed[None, :]
    )
    value = float(2.0 / (k * (k - 1)) * agreement[upper].sum())
    if merged:
        logger.debug("kendall uplift: merged bins, %d of %d used", k, bins)
    return KendallResult(
        value=value, bins_used=k, merged=merged, predicted=predicted, observed=observed
    )


def kendall_uplift(
    predicted_uplift: Vector, t: Vector, y: Vector, bins: int = DEFAULT_KENDALL_BINS
) -> float:
    return kendall_uplift_details(predicted_uplift, t, y, bins).value


@dataclass(frozen=True)
class EvalReport:
    """Qini coefficient and Kendall correlation of one run, or aggregated over runs.

    For a single run the value tuples hold one entry and the standard errors are 0.
    """

    qini: float
    kendall: float
    qini_values: tuple[float, ...] = ()
    kendall_values: tuple[float, ...] = ()
    qini_se2: float = 0.0
    kendall_se2: float = 0.0
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.qini_values:
            object.__setattr__(self, "qini_values", (self.qini,))
        if not self.kendall_values:
            object.__setattr__(self, "kendall_values", (self.kendall,))

    @property
    def runs(self) -> int:
        return len(self.qini_values)

    def to_dict(self) -> dict:
        return {
            "qini": self.qini,
            "qini_2se": self.qini_se2,
            "kendall": self.kendall,
            "kendall_2se": self.kendall_se2,
            "runs": self.runs,
            "flags": list(self.flags),
        }


def evaluate(
    predicted_uplift: Vector,
    t: Vector,
    y: Vector,
    qini_grid: int = DEFAULT_QINI_GRID,
    kendall_bins: int = DEFAULT_KENDALL_BINS,
    literal: bool = False,
) -> tuple[EvalReport, QiniCurve]:
    """Both metrics for one scored set of rows, with any fallbacks noted in ``flags``."""
    curve = qini_curve(predicted_uplift, t, y, qini_grid, literal=literal)
    kendall = kendall_uplift_details(predicted_uplift, t, y, kendall_bins)
    flags = []
    if curve.interpolated:
        flags.append(f"qini_interpolated={len(curve.interpolated)}")
    if kendall.merged:
        flags.append(f"kendall_bins_used={kendall.bins_used}")
    report = EvalReport(qini=qini_coefficient(curve), kendall=kendall.value, flags=tuple(flags))
    return report, curve


def aggregate(reports: list[EvalReport]) -> EvalReport:
    """Mean and 2 standard errors (sample std / sqrt(runs)) across runs."""
    if len(reports) < 2:
        raise AggregationError(f"aggregation needs at least 2 runs, got {len(reports)}")
    qini = tuple(v for r in reports for v in r.qini_values)
    kendall = tuple(v for r in reports for v in r.kendall_values)
    flags = tuple(sorted({flag for r in reports for flag in r.flags}))
    return EvalReport(
        qini=float(np.mean(qini)),
        kendall=float(np.mean(kendall)),
        qini_values=qini,
        kendall_values=kendall,
        qini_se2=2.0 * standard_error(qini),
        kendall_se2=2.0 * standard_error(kendall),
        flags=flags,
    )


@dataclass(frozen=True, eq=False)
class PermutationNull:
    qini: Vector
    kendall: Vector

    @property
    def qini_mean(self) -> float:
        return float(self.qini.mean())

    @property
    def qini_std(self) -> float:
        return float(self.qini.std(ddof=1))

    @property
    def kendall_mean(self) -> float:
        return float(self.kendall.mean())

    @property
    def kendall_std(self) -> float:
        return float(self.kendall.std(ddof=1))


def permutation_null(
    scores: Vector,
    t: Vector,
    y: Vector,
    permutations: int = 200,
    seed: int = 0,
    qini_grid: int = DEFAULT_QINI_GRID,
    kendall_bins: int = DEFAULT_KENDALL_BINS,
) -> PermutationNull:
    """Metric values of randomly permuted ``scores``: the no-signal reference distribution."""
    if permutations < 2:
        raise MetricError(f"need at least 2 permutations, got {permutations}")
    rng = np.random.default_rng(seed)
    scores = np.asarray(scores, dtype=np.float64)
    qini = np.empty(permutations)
    kendall = np.empty(permutations)
    for i in range(permutations):
        shuffled = scores[rng.permutation(scores.shape[0])]
        qini[i] = qini_coefficient(qini_curve(shuffled, t, y, qini_grid))
        kendall[i] = kendall_uplift(shuffled, t, y, kendall_bins)
    return PermutationNull(qini=qini, kendall=kendall)


def write_curve_csv(curve: QiniCurve, path: str | Path, header_comment: str = "") -> None:
    """Curve points as CSV with columns phi, f, q."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(header_comment)
        curve.to_frame().to_csv(f, index=False, float_format="%.17g")


def confidence_interval(values, z: float) -> tuple[float, float, float, float]:
    """(mean, standard error, lower, upper) of a normal-approximation interval."""
    mean = float(np.mean(values))
    se = standard_error(values)
    if math.isnan(se):
        return mean, se, float("nan"), float("nan")
    return mean, se, mean - z * se, mean + z * se
