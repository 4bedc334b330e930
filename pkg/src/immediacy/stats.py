"""Numerical statistics used throughout the pipeline.

Pearson correlation with t-test p-values, intraclass correlation for a
panel of raters (two-way random effects, average measures, absolute
agreement), median aggregation of rating triples, the rater-disagreement
filter, and Benjamini-Hochberg false-discovery-rate adjustment.

All functions are pure and safe for concurrent use.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np
from scipy import stats as sps

from .errors import UndefinedStatisticError

if TYPE_CHECKING:
    from .data import RatingTriple

ICC_MODEL = "ICC(2,k) two-way random, average measures, absolute agreement"


@dataclass(frozen=True)
class CorrelationResult:
    """Pearson correlation with its two-sided p-value and sample count."""

    r: float
    p_raw: float
    n: int

    def __post_init__(self):
        if abs(self.r) > 1.0 + 1e-9:
            raise ValueError(f"|r| must be <= 1, got {self.r}")


@dataclass(frozen=True)
class IccResult:
    """Intraclass correlation for an n_subjects x k_raters panel."""

    value: float
    n_subjects: int
    k_raters: int
    model: str = ICC_MODEL

    def __post_init__(self):
        if self.n_subjects < 2:
            raise ValueError("need at least 2 subjects")
        if self.k_raters < 2:
            raise ValueError("need at least 2 raters")


def pearson(x: Sequence[float], y: Sequence[float]) -> CorrelationResult:
    """Product-moment correlation of two equal-length sequences.

    The p-value is the two-sided t-test with n - 2 degrees of freedom
    applied to t = r * sqrt((n - 2) / (1 - r^2)).

    Raises:
        ValueError: length mismatch or fewer than 3 observations.
        UndefinedStatisticError: either input has zero variance.
    """
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.ndim != 1 or ya.ndim != 1:
        raise ValueError("inputs must be one-dimensional")
    if xa.shape[0] != ya.shape[0]:
        raise ValueError(f"length mismatch: {xa.shape[0]} vs {ya.shape[0]}")
    n = xa.shape[0]
    if n < 3:
        raise ValueError(f"need at least 3 observations, got {n}")

    dx = xa - xa.mean()
    dy = ya - ya.mean()
    ssx = float(np.dot(dx, dx))
    ssy = float(np.dot(dy, dy))
    if ssx == 0.0 or ssy == 0.0:
        raise UndefinedStatisticError("correlation undefined for zero-variance input")

    r = float(np.dot(dx, dy) / np.sqrt(ssx * ssy))
    r = max(-1.0, min(1.0, r))

    if abs(r) == 1.0:
        p = 0.0
    else:
        t = r * np.sqrt((n - 2) / (1.0 - r * r))
        p = float(2.0 * sps.t.sf(abs(t), df=n - 2))
    return CorrelationResult(r=r, p_raw=p, n=n)


def icc2k(matrix: Sequence[Sequence[float]] | np.ndarray) -> IccResult:
    """Two-way random-effects, average-measures, absolute-agreement ICC.

    ``matrix`` is an n_subjects x k_raters grid with no missing cells
    (rows are rated subjects, columns are raters).  From the two-way
    ANOVA mean squares the coefficient is

        (MSR - MSE) / (MSR + (MSC - MSE) / n)

    with MSR the between-subject, MSC the between-rater, and MSE the
    residual mean square.

    Raises:
        ValueError: malformed or too-small grid, or non-finite cells.
        UndefinedStatisticError: the denominator vanishes (no subject or
            rater variance at all), leaving reliability undefined.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("rating grid must be two-dimensional")
    if np.isnan(m).any():
        raise ValueError("rating grid contains missing cells")
    if not np.isfinite(m).all():
        raise ValueError("rating grid contains non-finite values")
    n, k = m.shape
    if n < 2 or k < 2:
        raise ValueError(f"need at least 2 subjects and 2 raters, got {n}x{k}")

    grand = m.mean()
    row_means = m.mean(axis=1)
    col_means = m.mean(axis=0)

    ss_total = float(((m - grand) ** 2).sum())
    ss_rows = k * float(((row_means - grand) ** 2).sum())
    ss_cols = n * float(((col_means - grand) ** 2).sum())
    ss_err = ss_total - ss_rows - ss_cols

    msr = ss_rows / (n - 1)
    msc = ss_cols / (k - 1)
    mse = ss_err / ((n - 1) * (k - 1))

    denom = msr + (msc - mse) / n
    if denom == 0.0:
        raise UndefinedStatisticError(
            "ICC undefined: zero subject and rater variance (0/0)"
        )
    return IccResult(value=(msr - mse) / denom, n_subjects=n, k_raters=k)


def median_rating(triple: "RatingTriple | Sequence[float]") -> float:
    """Middle order statistic of exactly three rating values."""
    values = getattr(triple, "values", triple)
    if len(values) != 3:
        raise ValueError(f"expected exactly 3 values, got {len(values)}")
    return float(sorted(values)[1])


def triple_std(values: Sequence[float]) -> float:
    """Sample standard deviation (n - 1 divisor) of a rating triple."""
    return float(np.std(np.asarray(values, dtype=np.float64), ddof=1))


def filter_by_disagreement(
    labels: Sequence["RatingTriple"],
    sigma_max: float,
) -> tuple[list["RatingTriple"], list["RatingTriple"]]:
    """Partition rating triples by rater disagreement.

    A triple counts as disagreement, and is excluded, when the sample
    standard deviation of its three values is >= ``sigma_max`` (the
    threshold itself is already disagreement).  Input order is preserved
    in both outputs.

    Returns:
        ``(kept, excluded)`` lists whose concatenation re-sorted by input
        position reproduces the input.
    """
    if sigma_max <= 0:
        raise ValueError("sigma_max must be positive")
    kept: list[RatingTriple] = []
    excluded: list[RatingTriple] = []
    for label in labels:
        if triple_std(label.values) >= sigma_max:
            excluded.append(label)
        else:
            kept.append(label)
    return kept, excluded


def fdr_adjust(p_values: Sequence[float]) -> list[float]:
    """Benjamini-Hochberg step-up adjustment of a family of p-values.

    Sorting ascending, the i-th smallest value becomes
    min_{j >= i} (m / j) * p_(j), clipped to 1; results are returned in
    the original input order.

    Raises:
        ValueError: any value outside [0, 1].
    """
    p = np.asarray(p_values, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError("p-values must be one-dimensional")
    if p.size == 0:
        return []
    if np.any((p < 0.0) | (p > 1.0)) or not np.isfinite(p).all():
        raise ValueError("p-values must lie in [0, 1]")

    m = p.size
    order = np.argsort(p, kind="stable")
    ranked = p[order] * m / np.arange(1, m + 1)
    # enforce monotonicity from the largest rank down
    adjusted_sorted = np.minimum.accumulate(ranked[::-1])[::-1]
    adjusted_sorted = np.minimum(adjusted_sorted, 1.0)

    out = np.empty(m, dtype=np.float64)
    out[order] = adjusted_sorted
    return [float(v) for v in out]
