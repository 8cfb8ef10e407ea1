"""Monte Carlo engine: synthetic datasets with controlled imbalance and
prognosis, rejection-rate grids, and the prognosis/imbalance diagnostics.

The generator fixes a balanced assignment vector and builds covariates as
linear loadings on its standardized version plus Gaussian noise:

    X_j  = rho_xj_z * z_tilde + sqrt(1 - rho_xj_z^2) * eps_j
    Y(0) = rho_x1_y * X_1     + sqrt(1 - rho_x1_y^2) * eps_y
    Y    = Y(0) + tau * z

which delivers the target expected correlations corr(X_j, Z) and
corr(X_1, Y(0)) while keeping unit marginal variances. A jointly normal
draw cannot produce an exactly balanced binary Z, so this linear-loading
construction is the one structural interpretation made.
"""

import hashlib
import itertools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import Dataset, population_sd
from .errors import BalanceLabError, CellFailure, ConfigError, InfeasibleCorrelation
from .permutation import STATISTIC_NAMES, permutation_pvalues
from .regression import fit_ols
from .rng import derive_seed, stream

__all__ = [
    "DgpConfig",
    "StudyConfig",
    "PowerStudyResult",
    "Diagnostics",
    "generate_dataset",
    "run_power_study",
    "diagnostics",
    "build_grid",
]


@dataclass(frozen=True)
class DgpConfig:
    """One cell of the data-generating grid."""

    n: int = 500
    p: int = 3
    rho_x1_z: float = 0.0
    rho_x2_z: float = 0.0
    rho_x1_y: float = 0.0
    tau: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 4 or self.n % 2:
            raise ConfigError(f"n must be even and at least 4, got {self.n}")
        if self.p < 1:
            raise ConfigError(f"p must be positive, got {self.p}")
        if self.rho_x2_z != 0.0 and self.p < 2:
            raise ConfigError("imbalance on x2 requires p >= 2")
        for name in ("rho_x1_z", "rho_x2_z", "rho_x1_y"):
            rho = getattr(self, name)
            if abs(rho) > 1.0:
                raise InfeasibleCorrelation(
                    f"{name} = {rho} implies negative noise variance (|rho| > 1)"
                )

    @property
    def imbalance(self) -> float:
        return self.rho_x2_z if self.rho_x2_z != 0.0 else self.rho_x1_z

    @property
    def imbalance_covariate(self) -> int:
        return 2 if self.rho_x2_z != 0.0 else 1


def generate_dataset(cfg: DgpConfig, replicate_index: int) -> Dataset:
    """Draw one synthetic dataset for the given replicate stream."""
    g = stream(cfg.seed, replicate_index, 0)
    half = cfg.n // 2
    z = np.zeros(cfg.n, dtype=np.int64)
    z[:half] = 1
    z_tilde = 2.0 * z - 1.0  # standardized balanced assignment

    eps = g.standard_normal((cfg.n, cfg.p))
    eps_y = g.standard_normal(cfg.n)

    loadings = np.zeros(cfg.p)
    loadings[0] = cfg.rho_x1_z
    if cfg.p >= 2:
        loadings[1] = cfg.rho_x2_z
    x = loadings * z_tilde[:, None] + np.sqrt(1.0 - loadings**2) * eps

    rho_y = cfg.rho_x1_y
    y0 = rho_y * x[:, 0] + math.sqrt(1.0 - rho_y**2) * eps_y
    y_obs = y0 + cfg.tau * z

    return Dataset(x=x, z=z, y_obs=y_obs, column_names=tuple(f"x{j+1}" for j in range(cfg.p)))


@dataclass(frozen=True)
class StudyConfig:
    """Full power-study description, loadable from a JSON config file."""

    imbalance_levels: tuple[float, ...] = (0.0, 0.1, 0.2)
    prognosis_levels: tuple[float, ...] = tuple(round(0.05 * k, 2) for k in range(11))
    imbalance_covariate: int = 1
    n: int = 500
    p: int = 3
    replicates: int = 300
    permutations: int = 200
    alpha: float = 0.05
    seed: int = 0
    statistics: tuple[str, ...] = STATISTIC_NAMES
    tau: float = 0.0
    weight_policy: str = "fixed"

    def __post_init__(self):
        if not self.imbalance_levels or not self.prognosis_levels:
            raise ConfigError("imbalance_levels and prognosis_levels must be non-empty")
        if self.imbalance_covariate not in (1, 2):
            raise ConfigError("imbalance_covariate must be 1 or 2")
        if self.replicates < 1 or self.permutations < 1:
            raise ConfigError("replicates and permutations must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.weight_policy not in ("fixed", "refit"):
            raise ConfigError(f"unknown weight policy {self.weight_policy!r}")
        unknown = set(self.statistics) - set(STATISTIC_NAMES)
        if unknown:
            raise ConfigError(f"unknown statistics: {sorted(unknown)}")

    @classmethod
    def from_dict(cls, raw: dict) -> "StudyConfig":
        allowed = set(cls.__dataclass_fields__)
        unknown = set(raw) - allowed
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        coerced = dict(raw)
        for key in ("imbalance_levels", "prognosis_levels", "statistics"):
            if key in coerced:
                coerced[key] = tuple(coerced[key])
        try:
            return cls(**coerced)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("imbalance_levels", "prognosis_levels", "statistics"):
            out[key] = list(out[key])
        return out


def build_grid(study: StudyConfig) -> list[DgpConfig]:
    """Expand a study config into per-cell DGP configs with derived seeds."""
    cells = []
    pairs = itertools.product(study.imbalance_levels, study.prognosis_levels)
    for cell_index, (imbalance, prognosis) in enumerate(pairs):
        cells.append(
            DgpConfig(
                n=study.n,
                p=study.p,
                rho_x1_z=imbalance if study.imbalance_covariate == 1 else 0.0,
                rho_x2_z=imbalance if study.imbalance_covariate == 2 else 0.0,
                rho_x1_y=prognosis,
                tau=study.tau,
                seed=derive_seed(study.seed, cell_index),
            )
        )
    return cells


@dataclass(frozen=True)
class PowerStudyResult:
    """Aggregated rejection behaviour for one grid cell."""

    grid_cell: tuple[float, float]
    config: DgpConfig
    rejection_rate: dict[str, float]
    mc_standard_error: dict[str, float]
    standardized_bias: float
    replicates: int
    permutations_per_replicate: int
    n_failed: int
    imbalance_covariate: int
    pvalues: Optional[dict[str, np.ndarray]] = field(default=None, compare=False)


def _run_replicate(args):
    cfg, replicate_index, statistics, b, weight_policy = args
    try:
        d = generate_dataset(cfg, replicate_index)
        perm_seed = derive_seed(cfg.seed, replicate_index, 1)
        results = permutation_pvalues(
            d, statistics, b, perm_seed, weight_policy=weight_policy
        )
        pvals = {name: results[name].p_value for name in statistics}
        y0 = d.y_obs - cfg.tau * d.z
        sd_y0 = population_sd(y0)
        treated = d.z == 1
        diff = float(d.y_obs[treated].mean() - d.y_obs[~treated].mean()) - cfg.tau
        bias = diff / sd_y0 if sd_y0 > 0 else 0.0
        return replicate_index, pvals, bias
    except BalanceLabError:
        return replicate_index, None, float("nan")


def _cell_fingerprint(cfg: DgpConfig, statistics, replicates, b, alpha, weight_policy) -> str:
    payload = json.dumps(
        {
            "config": asdict(cfg),
            "statistics": list(statistics),
            "replicates": replicates,
            "permutations": b,
            "alpha": alpha,
            "weight_policy": weight_policy,
        },
        sort_keys=True,
    )
    return hashlib.blake2b(payload.encode(), digest_size=8).hexdigest()


def _result_to_payload(result: PowerStudyResult, fingerprint: str) -> dict:
    payload = {
        "fingerprint": fingerprint,
        "grid_cell": list(result.grid_cell),
        "config": asdict(result.config),
        "rejection_rate": result.rejection_rate,
        "mc_standard_error": result.mc_standard_error,
        "standardized_bias": result.standardized_bias,
        "replicates": result.replicates,
        "permutations_per_replicate": result.permutations_per_replicate,
        "n_failed": result.n_failed,
        "imbalance_covariate": result.imbalance_covariate,
    }
    if result.pvalues is not None:
        payload["pvalues"] = {k: list(v) for k, v in result.pvalues.items()}
    return payload


def _result_from_payload(payload: dict) -> PowerStudyResult:
    pvalues = payload.get("pvalues")
    return PowerStudyResult(
        grid_cell=tuple(payload["grid_cell"]),
        config=DgpConfig(**payload["config"]),
        rejection_rate=dict(payload["rejection_rate"]),
        mc_standard_error=dict(payload["mc_standard_error"]),
        standardized_bias=payload["standardized_bias"],
        replicates=payload["replicates"],
        permutations_per_replicate=payload["permutations_per_replicate"],
        n_failed=payload["n_failed"],
        imbalance_covariate=payload["imbalance_covariate"],
        pvalues={k: np.asarray(v) for k, v in pvalues.items()} if pvalues else None,
    )


def _run_cell(
    cfg: DgpConfig,
    statistics: Sequence[str],
    replicates: int,
    b: int,
    alpha: float,
    weight_policy: str,
    threads: int,
    keep_pvalues: bool,
) -> PowerStudyResult:
    tasks = [(cfg, r, tuple(statistics), b, weight_policy) for r in range(replicates)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(_run_replicate, tasks, chunksize=8))
    else:
        outcomes = [_run_replicate(t) for t in tasks]
    outcomes.sort(key=lambda item: item[0])

    pvals = {name: np.full(replicates, np.nan) for name in statistics}
    bias = np.full(replicates, np.nan)
    n_failed = 0
    for idx, replicate_pvals, replicate_bias in outcomes:
        if replicate_pvals is None:
            n_failed += 1
            continue
        for name in statistics:
            pvals[name][idx] = replicate_pvals[name]
        bias[idx] = replicate_bias

    if n_failed / replicates >= 0.01:
        raise CellFailure(
            f"{n_failed}/{replicates} replicates failed in cell "
            f"(imbalance={cfg.imbalance}, prognosis={cfg.rho_x1_y})"
        )

    ok = replicates - n_failed
    rates = {}
    ses = {}
    for name in statistics:
        good = pvals[name][~np.isnan(pvals[name])]
        rate = float(np.count_nonzero(good < alpha)) / ok
        rates[name] = rate
        ses[name] = math.sqrt(rate * (1.0 - rate) / ok)

    return PowerStudyResult(
        grid_cell=(cfg.imbalance, cfg.rho_x1_y),
        config=cfg,
        rejection_rate=rates,
        mc_standard_error=ses,
        standardized_bias=float(np.nanmean(bias)) if ok else float("nan"),
        replicates=replicates,
        permutations_per_replicate=b,
        n_failed=n_failed,
        imbalance_covariate=cfg.imbalance_covariate,
        pvalues=pvals if keep_pvalues else None,
    )


def run_power_study(
    grid: Sequence[DgpConfig],
    statistics: Sequence[str] = STATISTIC_NAMES,
    replicates: int = 300,
    b_permutations: int = 200,
    alpha: float = 0.05,
    weight_policy: str = "fixed",
    threads: int = 1,
    checkpoint_dir: Optional[str] = None,
    resume: bool = False,
    keep_pvalues: bool = False,
    progress=None,
) -> list[PowerStudyResult]:
    """Run the full rejection-rate study over a grid of DGP cells.

    Deterministic given the grid seeds: replicate streams are derived from
    (cell seed, replicate index), aggregation is position-indexed, so the
    output is identical for any worker count. With ``checkpoint_dir`` each
    finished cell is persisted and (under ``resume=True``) reloaded instead
    of recomputed, as long as its configuration fingerprint still matches.
    """
    if not grid:
        raise ConfigError("grid must contain at least one cell")
    results = []
    for cell_index, cfg in enumerate(grid):
        fingerprint = _cell_fingerprint(
            cfg, statistics, replicates, b_permutations, alpha, weight_policy
        )
        path = None
        if checkpoint_dir is not None:
            path = os.path.join(checkpoint_dir, f"cell_{cell_index:04d}.json")
        if resume and path and os.path.exists(path):
            with open(path, "r", encoding="utf-8") as fh:
                payload = json.load(fh)
            if payload.get("fingerprint") == fingerprint:
                results.append(_result_from_payload(payload))
                if progress:
                    progress(cell_index, len(grid), "resumed")
                continue
        result = _run_cell(
            cfg, statistics, replicates, b_permutations, alpha,
            weight_policy, threads, keep_pvalues,
        )
        if path:
            os.makedirs(checkpoint_dir, exist_ok=True)
            tmp = path + ".tmp"
            with open(tmp, "w", encoding="utf-8") as fh:
                json.dump(_result_to_payload(result, fingerprint), fh)
            os.replace(tmp, path)
        results.append(result)
        if progress:
            progress(cell_index, len(grid), "computed")
    return results


@dataclass(frozen=True)
class Diagnostics:
    """Figure-1 style coordinates plus optional lagged-outcome correlations."""

    prognosis_r2: float
    imbalance_r2: float
    lagged_correlation_control: Optional[float] = None
    lagged_correlation_full: Optional[float] = None


def diagnostics(d: Dataset, lag: Optional[np.ndarray] = None) -> Diagnostics:
    """Prognosis and imbalance R-squared for one dataset.

    Prognosis is the R^2 of observed outcomes on all covariates within the
    control arm; imbalance is the R^2 of the assignment indicator on all
    covariates over every unit (linear probability fit). When a lagged
    outcome column is supplied, its Pearson correlation with the observed
    outcome is reported for the control arm and for the full data.
    """
    control = d.control_rows()
    prognosis = fit_ols(d.x[control], d.y_obs[control], include_intercept=True, arm="control")
    imbalance = fit_ols(d.x, d.z.astype(np.float64), include_intercept=True)

    lag_control = lag_full = None
    if lag is not None:
        lag = np.asarray(lag, dtype=np.float64)
        if lag.shape != (d.n,):
            raise ValueError(f"lag column must have length {d.n}")
        lag_control = float(np.corrcoef(lag[control], d.y_obs[control])[0, 1])
        lag_full = float(np.corrcoef(lag, d.y_obs)[0, 1])

    return Diagnostics(
        prognosis_r2=prognosis.r_squared,
        imbalance_r2=imbalance.r_squared,
        lagged_correlation_control=lag_control,
        lagged_correlation_full=lag_full,
    )
