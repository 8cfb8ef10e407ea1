"""Exact design-based variances of balance statistics under complete randomization.

Everything here is fully observable: the only randomness is which n1 of the
N units are treated, and the covariates are seen for every unit regardless
of arm. The closed forms are validated against an exhaustive enumeration
oracle that walks every possible assignment.
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .balance import scaled_covariates
from .data import Dataset
from .errors import (
    DegenerateAssignment,
    TooManyAssignments,
    WeightDimensionMismatch,
    ZeroVariance,
)

__all__ = [
    "VarianceReport",
    "OracleResult",
    "population_covariance",
    "exact_variance_delta_j",
    "exact_cov_delta",
    "variance_report",
    "enumeration_oracle",
    "normal_approx_test",
    "MAX_ENUMERATED_ASSIGNMENTS",
]

MAX_ENUMERATED_ASSIGNMENTS = 10**6

# Incremental subset sums are re-anchored with exact summation this often,
# bounding float drift over long enumerations.
_REFRESH_INTERVAL = 1024


@dataclass(frozen=True)
class VarianceReport:
    """Exact variances/covariances of the covariate mean differences."""

    var_delta_j: np.ndarray
    cov_delta: np.ndarray
    var_delta_uw: float
    var_delta_rw_conditional: float
    population_cov: np.ndarray
    scale: str


@dataclass(frozen=True)
class OracleResult:
    """Exact moments of a statistic over every possible assignment."""

    mean: float
    variance: float
    values: np.ndarray
    statistic: str


def _check_sizes(n: int, n1: int, n0: int) -> None:
    if n1 < 1 or n0 < 1:
        raise DegenerateAssignment(f"both arms must be non-empty, got n1={n1}, n0={n0}")
    if n1 + n0 != n:
        raise ValueError(f"n1 + n0 = {n1 + n0} does not match {n} rows")


def population_covariance(x: np.ndarray) -> np.ndarray:
    """Finite-population covariance matrix (1/N convention)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    centered = x - x.mean(axis=0)
    return centered.T @ centered / x.shape[0]


def _factor(n: int, n1: int, n0: int) -> float:
    return n * n / ((n - 1) * n1 * n0)


def exact_variance_delta_j(x_j: np.ndarray, n1: int, n0: int) -> float:
    """Exact randomization variance of one covariate's mean difference."""
    x_j = np.asarray(x_j, dtype=np.float64)
    _check_sizes(x_j.size, n1, n0)
    sigma2 = float(np.var(x_j, ddof=0))
    return _factor(x_j.size, n1, n0) * sigma2


def exact_cov_delta(x_j: np.ndarray, x_k: np.ndarray, n1: int, n0: int) -> float:
    """Exact randomization covariance between two mean differences."""
    x_j = np.asarray(x_j, dtype=np.float64)
    x_k = np.asarray(x_k, dtype=np.float64)
    if x_j.shape != x_k.shape:
        raise ValueError("columns must have equal length")
    _check_sizes(x_j.size, n1, n0)
    sigma_jk = float(np.mean((x_j - x_j.mean()) * (x_k - x_k.mean())))
    return _factor(x_j.size, n1, n0) * sigma_jk


def variance_report(
    d: Dataset, weights: Sequence[float], scale: str = "standardized"
) -> VarianceReport:
    """Assemble every exact variance quantity for one dataset.

    ``weights`` is the fixed vector conditioning the regression-weighted
    variance: Var(sum_j w_j delta_j | w) = w' Cov(delta) w.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (d.p,):
        raise WeightDimensionMismatch(f"expected {d.p} weights, got shape {w.shape}")
    sizes = d.sizes
    xs = scaled_covariates(d, scale)
    pop_cov = population_covariance(xs)
    cov_delta = _factor(d.n, sizes.n1, sizes.n0) * pop_cov
    ones = np.ones(d.p)
    return VarianceReport(
        var_delta_j=np.diag(cov_delta).copy(),
        cov_delta=cov_delta,
        var_delta_uw=float(ones @ cov_delta @ ones),
        var_delta_rw_conditional=float(w @ cov_delta @ w),
        population_cov=pop_cov,
        scale=scale,
    )


def _revolving_door_swaps(n: int, k: int):
    """Yield (out, in) swaps visiting every k-subset of range(n) exactly once.

    The walk starts at {0, ..., k-1}; consecutive subsets differ by a
    single exchanged element (revolving-door Gray code), so any statistic
    linear in the treated set updates in O(1) per step.
    """

    def forward(n, k):
        if 0 < k < n:
            yield from forward(n - 1, k)
            yield (k - 2, n - 1) if k >= 2 else (n - 2, n - 1)
            yield from backward(n - 1, k - 1)

    def backward(n, k):
        if 0 < k < n:
            yield from forward(n - 1, k - 1)
            yield (n - 1, k - 2) if k >= 2 else (n - 1, n - 2)
            yield from backward(n - 1, k)

    yield from forward(n, k)


def enumeration_oracle(
    x: np.ndarray,
    n1: int,
    statistic: str = "uw",
    weights: Optional[Sequence[float]] = None,
    j: Optional[int] = None,
) -> OracleResult:
    """Exact distribution of a balance statistic over all assignments.

    Brute force over every way of choosing the n1 treated units, kept
    independent of the closed-form variance module so it can validate it.

    Parameters
    ----------
    x : (N, p) array
        Covariates on whatever scale the statistic should use.
    n1 : int
        Treated-arm size; all C(N, n1) assignments are visited.
    statistic : {"uw", "rw", "delta_j"}
    weights : length-p vector, required for "rw"
    j : column index, required for "delta_j"
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n, p = x.shape
    n0 = n - n1
    _check_sizes(n, n1, n0)

    if statistic == "uw":
        scores = x.sum(axis=1)
    elif statistic == "rw":
        if weights is None:
            raise ValueError("statistic 'rw' requires a weight vector")
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (p,):
            raise WeightDimensionMismatch(f"expected {p} weights, got shape {w.shape}")
        scores = x @ w
    elif statistic == "delta_j":
        if j is None or not 0 <= j < p:
            raise ValueError(f"statistic 'delta_j' requires a column index in [0, {p})")
        scores = x[:, j].copy()
    else:
        raise ValueError(f"unknown statistic {statistic!r}")

    total_assignments = math.comb(n, n1)
    if total_assignments > MAX_ENUMERATED_ASSIGNMENTS:
        raise TooManyAssignments(
            f"C({n}, {n1}) = {total_assignments} exceeds the "
            f"{MAX_ENUMERATED_ASSIGNMENTS} assignment guard"
        )

    # delta(S) = coef * sum_{i in S} scores_i + const for treated set S.
    coef = 1.0 / n1 + 1.0 / n0
    const = -math.fsum(scores) / n0

    members = np.zeros(n, dtype=bool)
    members[:n1] = True
    subset_sum = math.fsum(scores[:n1])

    values = np.empty(total_assignments)
    values[0] = coef * subset_sum + const
    for step, (out_i, in_i) in enumerate(_revolving_door_swaps(n, n1), start=1):
        members[out_i] = False
        members[in_i] = True
        if step % _REFRESH_INTERVAL == 0:
            subset_sum = math.fsum(scores[members])
        else:
            subset_sum += scores[in_i] - scores[out_i]
        values[step] = coef * subset_sum + const

    mean = math.fsum(values) / total_assignments
    variance = math.fsum((v - mean) ** 2 for v in values) / total_assignments
    return OracleResult(mean=mean, variance=variance, values=values, statistic=statistic)


def normal_approx_test(statistic_value: float, exact_variance: float) -> float:
    """Two-sided normal p-value 2(1 - Phi(|value| / sqrt(variance))).

    Secondary output only: permutation inference is the supported decision
    rule. Phi is evaluated through the complementary error function.
    """
    if exact_variance <= 0.0:
        raise ZeroVariance(f"exact variance must be positive, got {exact_variance}")
    z = abs(statistic_value) / math.sqrt(exact_variance)
    return math.erfc(z / math.sqrt(2.0))
