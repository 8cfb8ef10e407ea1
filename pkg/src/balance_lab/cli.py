"""Command-line surface: test, simulate, diagnose.

Exit codes: 0 = computed (p-values are results, never errors), 2 = usage or
validation error, 3 = internal numerical failure.
"""

import argparse
import json
import os
import secrets
import sys
import warnings

import numpy as np

from . import __version__
from .balance import compute_balance_report
from .data import Dataset, MissingRowsDropped, load_dataset, standardize
from .errors import (
    BalanceLabError,
    CellFailure,
    ConfigError,
    InternalNumericalError,
    MissingColumn,
    ZeroVariance,
)
from .permutation import STATISTIC_NAMES, permutation_pvalues
from .regression import control_arm_weights
from .reports import (
    PLOT_FIELDS,
    RESULTS_FIELDS,
    bytes_digest,
    file_digest,
    make_manifest,
    plot_data_rows,
    power_curve_svg,
    render_diagnose_report,
    render_test_report,
    results_table_rows,
    utc_now,
    write_csv,
    write_json,
)
from .simulation import StudyConfig, build_grid, diagnostics, run_power_study
from .variance import normal_approx_test, variance_report

_DELIMITERS = {"comma": ",", "tab": "\t"}


def _add_input_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--input", required=True, help="delimiter-separated input file")
    parser.add_argument("--treatment", required=True, help="treatment column name")
    parser.add_argument("--outcome", required=True, help="outcome column name")
    parser.add_argument(
        "--covariates", required=True, help="comma-separated covariate column names"
    )
    parser.add_argument(
        "--treated-level", default=None, help="treated label when treatment is not 0/1"
    )
    parser.add_argument(
        "--delimiter", choices=sorted(_DELIMITERS), default="comma",
        help="field separator (default comma)",
    )
    parser.add_argument(
        "--lenient-missing", action="store_true",
        help="drop rows with missing cells instead of rejecting the file",
    )
    parser.add_argument("--lag-column", default=None, help="lagged outcome column name")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="balance-lab",
        description="Conditional covariate balance tests with permutation inference.",
    )
    parser.add_argument("--version", action="version", version=f"balance-lab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_test = sub.add_parser("test", help="run balance tests on a dataset")
    _add_input_flags(p_test)
    p_test.add_argument(
        "--statistic", choices=[*STATISTIC_NAMES, "all"], default="all",
        help="which omnibus statistic to test (default all)",
    )
    p_test.add_argument("--permutations", type=int, default=1000, help="number of label permutations B")
    p_test.add_argument("--seed", type=int, default=None, help="64-bit reproducibility seed")
    p_test.add_argument(
        "--weight-policy", choices=["fixed", "refit"], default="fixed",
        help="hold prognosis weights fixed or refit them per permutation",
    )
    p_test.add_argument(
        "--scale", choices=["standardized", "raw"], default="standardized",
        help="covariate scale for the difference statistics",
    )
    p_test.add_argument("--alpha", type=float, default=0.05, help="nominal test level (reporting only)")
    p_test.add_argument("--threads", type=int, default=None, help="worker count (0 = auto)")
    p_test.add_argument("--out-dir", default=".", help="directory for report files")
    p_test.add_argument(
        "--dump-permutations", action="store_true",
        help="also write each statistic's permuted values as .npy",
    )

    p_sim = sub.add_parser("simulate", help="run a Monte Carlo power study")
    p_sim.add_argument("--config", required=True, help="JSON study configuration")
    p_sim.add_argument("--out-dir", required=True, help="output directory")
    p_sim.add_argument("--resume", action="store_true", help="reuse finished cell checkpoints")
    p_sim.add_argument("--threads", type=int, default=None, help="worker count (0 = auto)")
    p_sim.add_argument("--seed", type=int, default=None, help="override the config seed")

    p_diag = sub.add_parser("diagnose", help="prognosis/imbalance diagnostics only")
    _add_input_flags(p_diag)
    p_diag.add_argument("--out-dir", default=".", help="directory for report files")

    return parser


def _resolve_threads(value) -> int:
    if value is None:
        value = int(os.environ.get("BALANCE_LAB_THREADS", "0") or "0")
    if value <= 0:
        return os.cpu_count() or 1
    return value


def _resolve_seed(value):
    if value is not None:
        return int(value), False
    return secrets.randbits(62), True


def _covariate_list(raw: str) -> list[str]:
    names = [c.strip() for c in raw.split(",") if c.strip()]
    if not names:
        raise MissingColumn("--covariates must name at least one column")
    return names


def _load_from_args(args):
    names = _covariate_list(args.covariates)
    load_names = list(names)
    if args.lag_column:
        load_names.append(args.lag_column)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", MissingRowsDropped)
        full = load_dataset(
            args.input,
            args.treatment,
            args.outcome,
            load_names,
            delimiter=_DELIMITERS[args.delimiter],
            treated_level=args.treated_level,
            lenient_missing=args.lenient_missing,
        )
    dropped = sum(getattr(w.message, "count", 0) for w in caught)
    lag = None
    d = full
    if args.lag_column:
        lag = full.x[:, -1].copy()
        d = Dataset(x=full.x[:, :-1], z=full.z, y_obs=full.y_obs, column_names=tuple(names))
    return d, lag, dropped


def _dataset_summary(d, view_dropped, rows_dropped) -> dict:
    sizes = d.sizes
    return {
        "n": d.n,
        "n1": sizes.n1,
        "n0": sizes.n0,
        "p": d.p,
        "columns": list(d.column_names),
        "dropped_constant_columns": [d.column_names[j] for j in view_dropped],
        "rows_dropped_missing": rows_dropped,
    }


def _maybe_asymptotic(value: float, variance) -> float | None:
    if variance is None:
        return None
    try:
        return normal_approx_test(value, variance)
    except ZeroVariance:
        return None


def cmd_test(args) -> int:
    started = utc_now()
    seed, generated = _resolve_seed(args.seed)
    threads = _resolve_threads(args.threads)
    d, lag, rows_dropped = _load_from_args(args)

    statistics = list(STATISTIC_NAMES) if args.statistic == "all" else [args.statistic]
    weights = control_arm_weights(d, scale=args.scale)
    balance = compute_balance_report(d, scale=args.scale, weights=weights)
    variances = variance_report(d, weights.coefficients, scale=args.scale)
    perms = permutation_pvalues(
        d,
        statistics,
        args.permutations,
        seed,
        weight_policy=args.weight_policy,
        scale=args.scale,
        weights=weights,
        threads=threads,
    )
    diag = diagnostics(d, lag)
    view = standardize(d)
    per_covariate = []
    for j, name in enumerate(d.column_names):
        delta_j = float(balance.delta[j])
        var_j = float(variances.var_delta_j[j])
        se = var_j**0.5
        per_covariate.append(
            {
                "name": name,
                "delta": delta_j,
                "exact_se": se,
                "z": delta_j / se if se > 0 else None,
                "asymptotic_p": _maybe_asymptotic(delta_j, var_j if var_j > 0 else None),
            }
        )

    exact_var = {
        "uw": variances.var_delta_uw,
        "rw": variances.var_delta_rw_conditional,
        "hotelling": None,
    }
    stat_rows = []
    for name in statistics:
        res = perms[name]
        stat_rows.append(
            {
                "name": name,
                "observed": res.observed,
                "exact_variance": exact_var[name],
                "permutation_p": res.p_value,
                "p_conservative": res.p_conservative,
                "asymptotic_p": _maybe_asymptotic(res.observed, exact_var[name]),
                "b": res.b,
                "n_failed": res.n_failed,
            }
        )

    configuration = {
        "input": args.input,
        "treatment": args.treatment,
        "outcome": args.outcome,
        "covariates": list(d.column_names),
        "treated_level": args.treated_level,
        "statistic": args.statistic,
        "permutations": args.permutations,
        "weight_policy": args.weight_policy,
        "scale": args.scale,
        "alpha": args.alpha,
        "threads": threads,
        "lag_column": args.lag_column,
        "lenient_missing": args.lenient_missing,
        "delimiter": args.delimiter,
        "seed_generated": generated,
    }
    manifest = make_manifest("test", configuration, seed, file_digest(args.input), started)

    report = {
        "manifest": manifest.to_dict(),
        "dataset": _dataset_summary(d, view.dropped_constant_columns, rows_dropped),
        "scale": args.scale,
        "weight_policy": args.weight_policy,
        "per_covariate": per_covariate,
        "statistics": stat_rows,
        "hotelling_used_pinv": balance.hotelling_used_pinv,
        "weights": {
            "arm": weights.arm,
            "coefficients": [float(v) for v in weights.coefficients],
            "standardized_coefficients": [float(v) for v in weights.standardized_coefficients],
            "intercept": weights.intercept,
            "r_squared": weights.r_squared,
            "n_used": weights.n_used,
        },
        "variance": {
            "var_delta_j": [float(v) for v in variances.var_delta_j],
            "cov_delta": [[float(v) for v in row] for row in variances.cov_delta],
            "var_delta_uw": variances.var_delta_uw,
            "var_delta_rw_conditional": variances.var_delta_rw_conditional,
        },
        "diagnostics": {
            "prognosis_r2": diag.prognosis_r2,
            "imbalance_r2": diag.imbalance_r2,
            "lagged_correlation_control": diag.lagged_correlation_control,
            "lagged_correlation_full": diag.lagged_correlation_full,
        },
    }

    os.makedirs(args.out_dir, exist_ok=True)
    write_json(os.path.join(args.out_dir, "balance_report.json"), report)
    text = render_test_report(report)
    with open(os.path.join(args.out_dir, "balance_report.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    if args.dump_permutations:
        for name in statistics:
            np.save(
                os.path.join(args.out_dir, f"permuted_{name}.npy"),
                perms[name].permuted_values,
            )
    sys.stdout.write(text)
    return 0


def cmd_simulate(args) -> int:
    started = utc_now()
    threads = _resolve_threads(args.threads)
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {args.config!r}: {exc}") from None
    if args.seed is not None:
        raw["seed"] = args.seed
    study = StudyConfig.from_dict(raw)

    os.makedirs(args.out_dir, exist_ok=True)
    checkpoint_dir = os.path.join(args.out_dir, "checkpoints")
    grid = build_grid(study)

    def progress(i, total, how):
        cell = grid[i]
        sys.stdout.write(
            f"[{i + 1}/{total}] imbalance={cell.imbalance:g} "
            f"prognosis={cell.rho_x1_y:g} ({how})\n"
        )
        sys.stdout.flush()

    results = run_power_study(
        grid,
        statistics=study.statistics,
        replicates=study.replicates,
        b_permutations=study.permutations,
        alpha=study.alpha,
        weight_policy=study.weight_policy,
        threads=threads,
        checkpoint_dir=checkpoint_dir,
        resume=args.resume,
        progress=progress,
    )

    config_digest = bytes_digest(
        json.dumps(study.to_dict(), sort_keys=True).encode("utf-8")
    )
    results_path = os.path.join(args.out_dir, "results.csv")
    write_csv(results_path, RESULTS_FIELDS, results_table_rows(results))
    plot_path = os.path.join(args.out_dir, "plot_data.csv")
    write_csv(plot_path, PLOT_FIELDS, plot_data_rows(results))

    svg_paths = []
    for level in study.imbalance_levels:
        facet = [r for r in results if r.grid_cell[0] == level]
        prognosis = [r.grid_cell[1] for r in facet]
        series = {
            name: [r.rejection_rate[name] for r in facet] for name in study.statistics
        }
        bias = [r.standardized_bias for r in facet]
        label = f"imbalance={level:g} (x{study.imbalance_covariate})"
        svg = power_curve_svg(label, prognosis, series, bias, config_digest)
        path = os.path.join(
            args.out_dir, f"power_x{study.imbalance_covariate}_imb{level:g}.svg"
        )
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(svg)
        svg_paths.append(path)

    configuration = {
        "config_file": args.config,
        "config_digest": config_digest,
        "study": study.to_dict(),
        "threads": threads,
        "resume": args.resume,
    }
    manifest = make_manifest(
        "simulate", configuration, study.seed, file_digest(args.config), started
    )
    payload = manifest.to_dict()
    payload["outputs"] = {
        os.path.basename(path): file_digest(path)
        for path in [results_path, plot_path, *svg_paths]
    }
    write_json(os.path.join(args.out_dir, "manifest.json"), payload)
    sys.stdout.write(f"wrote {results_path}\n")
    return 0


def cmd_diagnose(args) -> int:
    started = utc_now()
    d, lag, rows_dropped = _load_from_args(args)
    diag = diagnostics(d, lag)
    view = standardize(d)
    configuration = {
        "input": args.input,
        "treatment": args.treatment,
        "outcome": args.outcome,
        "covariates": list(d.column_names),
        "lag_column": args.lag_column,
        "lenient_missing": args.lenient_missing,
        "delimiter": args.delimiter,
    }
    manifest = make_manifest("diagnose", configuration, 0, file_digest(args.input), started)
    report = {
        "manifest": manifest.to_dict(),
        "dataset": _dataset_summary(d, view.dropped_constant_columns, rows_dropped),
        "diagnostics": {
            "prognosis_r2": diag.prognosis_r2,
            "imbalance_r2": diag.imbalance_r2,
            "lagged_correlation_control": diag.lagged_correlation_control,
            "lagged_correlation_full": diag.lagged_correlation_full,
        },
    }
    os.makedirs(args.out_dir, exist_ok=True)
    write_json(os.path.join(args.out_dir, "diagnose_report.json"), report)
    text = render_diagnose_report(report)
    with open(os.path.join(args.out_dir, "diagnose_report.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    sys.stdout.write(text)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"test": cmd_test, "simulate": cmd_simulate, "diagnose": cmd_diagnose}
    try:
        return handlers[args.command](args)
    except (InternalNumericalError, CellFailure, np.linalg.LinAlgError) as exc:
        sys.stderr.write(f"error: internal numerical failure: {exc}\n")
        return 3
    except BalanceLabError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except OSError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
