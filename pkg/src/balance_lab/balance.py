"""Per-covariate mean differences and the three omnibus balance statistics.

The regression-weighted sum is computed two ways on every call: as the
weighted sum of covariate differences and as the difference between the
fitted treatment-group mean and the observed control-group mean. The two
are algebraically identical (the intercept cancels in the difference) and
the module verifies the identity numerically.
"""

from dataclasses import dataclass

import numpy as np

from .data import Dataset, standardize
from .errors import InternalNumericalError, WeightDimensionMismatch
from .regression import RegressionFit, control_arm_weights, treatment_arm_weights

__all__ = [
    "BalanceReport",
    "covariate_differences",
    "delta_unweighted",
    "delta_regression_weighted",
    "hotelling_t2",
    "scaled_covariates",
    "compute_balance_report",
]


@dataclass(frozen=True)
class BalanceReport:
    """All balance statistics for one dataset on one covariate scale."""

    delta: np.ndarray
    delta_uw: float
    delta_rw: float
    hotelling_t2: float
    weights_used: RegressionFit
    scale: str
    hotelling_used_pinv: bool
    fitted_mean_difference: float


def scaled_covariates(d: Dataset, scale: str) -> np.ndarray:
    """Covariate matrix on the requested scale, always N x p.

    On the standardized scale, constant columns (population SD zero)
    become all-zero columns rather than dividing by zero; they carry no
    balance information either way.
    """
    if scale == "raw":
        return d.x
    if scale == "standardized":
        view = standardize(d)
        out = np.zeros_like(d.x)
        out[:, list(view.retained_columns)] = view.x_std
        return out
    raise ValueError(f"unknown scale {scale!r}")


def covariate_differences(d: Dataset, scale: str = "standardized") -> np.ndarray:
    """Treated-minus-control mean difference for every covariate."""
    xs = scaled_covariates(d, scale)
    treated = d.z == 1
    return xs[treated].mean(axis=0) - xs[~treated].mean(axis=0)


def delta_unweighted(d: Dataset, scale: str = "standardized") -> float:
    """Sum of covariate mean differences (equal weight per covariate)."""
    return float(covariate_differences(d, scale).sum())


def delta_regression_weighted(
    d: Dataset, weights: RegressionFit, scale: str = "standardized"
) -> float:
    """Weighted sum of covariate differences with prognosis weights.

    ``weights`` must come from an arm regression fit on the same
    covariates and scale (see ``control_arm_weights``). The value is also
    computed as the fitted-mean difference between arms and the two paths
    are required to agree.
    """
    w = np.asarray(weights.coefficients, dtype=np.float64)
    if w.shape != (d.p,):
        raise WeightDimensionMismatch(
            f"expected {d.p} weights, got shape {w.shape}"
        )
    delta = covariate_differences(d, scale)
    weighted_sum = float(w @ delta)

    fitted_diff = _fitted_mean_difference(d, weights, scale)

    if abs(weighted_sum - fitted_diff) > 1e-8 * max(1.0, abs(weighted_sum)):
        raise InternalNumericalError(
            "internal identity violated: weighted covariate sum "
            f"{weighted_sum!r} != fitted-mean difference {fitted_diff!r}"
        )
    return weighted_sum


def _fitted_mean_difference(d: Dataset, weights: RegressionFit, scale: str) -> float:
    """Fitted mean in the unobserved arm minus the observed mean in the fit arm."""
    xs = scaled_covariates(d, scale)
    w = np.asarray(weights.coefficients, dtype=np.float64)
    intercept = weights.intercept or 0.0
    if weights.arm == "treatment":
        fitted_control = float(np.mean(xs[d.control_rows()] @ w)) + intercept
        return float(d.y_obs[d.treated_rows()].mean()) - fitted_control
    fitted_treated = float(np.mean(xs[d.treated_rows()] @ w)) + intercept
    return fitted_treated - float(d.y_obs[d.control_rows()].mean())


def _hotelling(x: np.ndarray, z: np.ndarray) -> tuple[float, bool]:
    treated = z == 1
    xt, xc = x[treated], x[~treated]
    n1, n0 = xt.shape[0], xc.shape[0]
    n = n1 + n0
    diff = xt.mean(axis=0) - xc.mean(axis=0)

    ct = xt - xt.mean(axis=0)
    cc = xc - xc.mean(axis=0)
    pooled = (ct.T @ ct + cc.T @ cc) / (n - 2)

    eigenvalues = np.linalg.eigvalsh(pooled)
    lam_max = float(eigenvalues.max(initial=0.0))
    used_pinv = lam_max <= 0.0 or float(eigenvalues.min()) <= 1e-12 * lam_max
    if used_pinv:
        solved = np.linalg.pinv(pooled) @ diff
    else:
        solved = np.linalg.solve(pooled, diff)
    t2 = (n1 * n0 / n) * float(diff @ solved)
    return max(t2, 0.0), used_pinv


def hotelling_t2(d: Dataset) -> float:
    """Two-sample Hotelling T-squared with pooled sample covariance.

    Affine-invariant in the covariates, so it is computed from the raw
    matrix. A singular pooled covariance falls back to the pseudo-inverse;
    the fallback is flagged in ``compute_balance_report``.
    """
    value, _ = _hotelling(d.x, d.z)
    return value


def compute_balance_report(
    d: Dataset,
    scale: str = "standardized",
    weights: RegressionFit | None = None,
    weight_arm: str = "control",
) -> BalanceReport:
    """Assemble every balance statistic for one dataset.

    Weights default to a fresh fit on the requested arm; pass an existing
    ``RegressionFit`` to reuse one (e.g. inside a permutation loop).
    """
    if weights is None:
        if weight_arm == "control":
            weights = control_arm_weights(d, scale=scale)
        elif weight_arm == "treatment":
            weights = treatment_arm_weights(d, scale=scale)
        else:
            raise ValueError(f"unknown weight arm {weight_arm!r}")

    delta = covariate_differences(d, scale)
    delta_rw = delta_regression_weighted(d, weights, scale)
    t2, used_pinv = _hotelling(d.x, d.z)
    fitted_diff = _fitted_mean_difference(d, weights, scale)

    return BalanceReport(
        delta=delta,
        delta_uw=float(delta.sum()),
        delta_rw=delta_rw,
        hotelling_t2=t2,
        weights_used=weights,
        scale=scale,
        hotelling_used_pinv=used_pinv,
        fitted_mean_difference=fitted_diff,
    )
