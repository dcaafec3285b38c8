"""Command line driver.

Subcommands
-----------
estimate
    Load return and factor files, run the requested estimators, and emit
    premia, standard errors and specification tests.
spec-test
    Same pipeline as ``estimate`` but reporting only the specification
    test rows.
calibrate
    Fit the simulation generator's moments to the data and write them as
    JSON (including principal-component strength diagnostics).
simulate
    Run a Monte Carlo experiment described by a config file and write the
    aggregated metrics.

Exit codes: 0 success, 1 unexpected internal error, 2 input/output
problems, 3 identification or singularity failures, 4 configuration
errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .errors import (
    AlignmentError,
    DataFormatError,
    IdentificationError,
    InsufficientDataError,
    ParameterError,
    SingularMatrixError,
)
from .foursplit import four_split_estimate
from .inference import newey_west, specification_test
from .panel import (
    FactorPanel,
    ReturnsPanel,
    align,
    build_excess_returns,
    load_french_factors,
    load_french_portfolios,
    load_french_table,
)
from .simulation import (
    CalibrationSummary,
    build_grid,
    calibrate,
    metrics_to_csv,
    parse_experiment_config,
    run_experiment,
)
from .twopass import cross_section_r2, first_pass_betas, two_pass_estimate

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_IO = 2
EXIT_SINGULAR = 3
EXIT_CONFIG = 4

_STYLE_COLUMNS = ("Mkt-RF", "SMB", "HML")


class _ArgumentParser(argparse.ArgumentParser):
    """Parser that reports bad flags as configuration errors (exit 4)."""

    def error(self, message):
        raise ParameterError(message)


def _build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="riskpremia", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_data_flags(p):
        p.add_argument("--returns", required=True, help="portfolio return CSV (French format)")
        p.add_argument("--factors", required=True, help="style factor CSV (French format)")
        p.add_argument("--riskfree", help="risk-free rate CSV; omit if returns are already excess")
        p.add_argument("--momentum", help="momentum factor CSV, appended as the last factor")

    def add_output_flags(p):
        p.add_argument("--out", help="output path (stdout when omitted)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")

    def add_estimation_flags(p):
        p.add_argument("--method", choices=("two-pass", "four-split", "both"), default="both")
        p.add_argument("--kv", type=int, default=1, help="proxy dimension for four-split")
        p.add_argument("--nw-lags", type=int, default=4)
        p.add_argument("--a-matrix", help="CSV with the k_v x k_F proxy weighting matrix")

    p_est = sub.add_parser("estimate", help="estimate risk premia from data files")
    add_data_flags(p_est)
    add_estimation_flags(p_est)
    add_output_flags(p_est)

    p_spec = sub.add_parser("spec-test", help="report only the specification tests")
    add_data_flags(p_spec)
    add_estimation_flags(p_spec)
    add_output_flags(p_spec)

    p_cal = sub.add_parser("calibrate", help="fit simulation moments to data (JSON output)")
    add_data_flags(p_cal)
    p_cal.add_argument("--out", help="output path (stdout when omitted)")

    p_sim = sub.add_parser("simulate", help="run a Monte Carlo experiment from a config file")
    p_sim.add_argument("--config", required=True, help="key = value experiment description")
    p_sim.add_argument("--seed", type=int, help="override the config seed")
    p_sim.add_argument("--threads", type=int, default=1)
    add_output_flags(p_sim)

    return parser


def _load_input_panels(args) -> tuple[ReturnsPanel, FactorPanel]:
    raw = load_french_portfolios(args.returns)
    if args.riskfree:
        periods, names, values = load_french_table(args.riskfree)
        col = names.index("RF") if "RF" in names else 0
        rf_map = dict(zip(periods, values[:, col]))
        keep = [t for t, p in enumerate(raw.periods) if p in rf_map]
        if not keep:
            raise AlignmentError("risk-free file shares no periods with the returns")
        raw = ReturnsPanel(
            assets=raw.assets,
            periods=tuple(raw.periods[t] for t in keep),
            values=raw.values[:, keep],
        )
        rf = np.array([rf_map[p] for p in raw.periods])
        returns = build_excess_returns(raw, rf)
    else:
        returns = raw

    factors = load_french_factors(args.factors)
    if all(c in factors.names for c in _STYLE_COLUMNS):
        factors = load_french_factors(args.factors, columns=list(_STYLE_COLUMNS))
    elif "RF" in factors.names:
        keep = [n for n in factors.names if n != "RF"]
        factors = load_french_factors(args.factors, columns=keep)

    if args.momentum:
        mom = load_french_factors(args.momentum)
        common = sorted(set(factors.periods) & set(mom.periods))
        if not common:
            raise AlignmentError("momentum file shares no periods with the factors")
        f_idx = [factors.periods.index(p) for p in common]
        m_idx = [mom.periods.index(p) for p in common]
        factors = FactorPanel(
            names=factors.names + (mom.names[0],),
            periods=tuple(common),
            values=np.column_stack([factors.values[f_idx], mom.values[m_idx][:, :1]]),
        )
    return align(returns, factors)


def _load_a_matrix(path, k_v: int, k_f: int) -> np.ndarray:
    matrix = np.loadtxt(path, delimiter=",", ndmin=2)
    if matrix.shape != (k_v, k_f):
        raise ParameterError(
            f"a-matrix in {path} has shape {matrix.shape}, expected ({k_v}, {k_f})"
        )
    return matrix


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _write_rows(rows, fmt: str, out) -> None:
    if fmt == "csv":
        out.write("section,method,factor,value\n")
        for section, method, factor, value in rows:
            out.write(f"{section},{method},{factor},{_fmt(value)}\n")
    else:
        nested: dict = {}
        for section, method, factor, value in rows:
            nested.setdefault(method, {}).setdefault(section, {})
            key = factor if factor else "_"
            nested[method][section][key] = float(value)
        json.dump(nested, out, indent=2, sort_keys=True)
        out.write("\n")


def _estimate_rows(args, spec_only: bool) -> list[tuple[str, str, str, float]]:
    returns, factors = _load_input_panels(args)
    lrv = newey_west(factors, lags=args.nw_lags)
    T = returns.n_periods
    names = factors.names
    rows: list[tuple[str, str, str, float]] = []

    factor_means = factors.values.mean(axis=0)
    if not spec_only:
        mean_se = np.sqrt(np.diag(lrv.omega) / T)
        for j, name in enumerate(names):
            rows.append(("premia", "average", name, factor_means[j]))
        for j, name in enumerate(names):
            rows.append(("std_error", "average", name, mean_se[j]))

    methods = ("two-pass", "four-split") if args.method == "both" else (args.method,)
    a_matrix = None
    if args.a_matrix:
        a_matrix = _load_a_matrix(args.a_matrix, args.kv, factors.n_factors)

    for method in methods:
        if method == "two-pass":
            result = two_pass_estimate(returns, factors, lrv)
        else:
            result = four_split_estimate(
                returns, factors, lrv, k_v=args.kv, a_matrix=a_matrix
            )
        if not spec_only:
            for j, name in enumerate(names):
                rows.append(("premia", method, name, result.premia[j]))
            for j, name in enumerate(names):
                rows.append(("std_error", method, name, result.std_errors[j]))
            if method == "two-pass":
                beta_set = first_pass_betas(returns, factors)
                r2 = cross_section_r2(beta_set, result.premia, returns.mean_returns())
                rows.append(("r_squared", method, "", r2))
        test = specification_test(result, factor_means)
        rows.append(("wald", method, "", test.statistic))
        rows.append(("wald_dof", method, "", float(test.dof)))
        rows.append(("p_value", method, "", test.p_value))
    return rows


def _open_out(args):
    if args.out:
        return open(args.out, "w", encoding="utf-8", newline="\n")
    return None


def _cmd_estimate(args, spec_only: bool = False) -> int:
    rows = _estimate_rows(args, spec_only)
    handle = _open_out(args)
    try:
        _write_rows(rows, args.format, handle if handle else sys.stdout)
    finally:
        if handle:
            handle.close()
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    returns, factors = _load_input_panels(args)
    if factors.n_factors != 4:
        raise ParameterError(
            "calibrate needs three style factors plus --momentum "
            f"(got {factors.n_factors} factor columns)"
        )
    style = FactorPanel(names=factors.names[:3], periods=factors.periods,
                        values=factors.values[:, :3])
    momentum = FactorPanel(names=factors.names[3:], periods=factors.periods,
                           values=factors.values[:, 3:])
    summary = calibrate(returns, style, momentum)
    handle = _open_out(args)
    try:
        summary.to_json(handle if handle else sys.stdout)
        if handle is None:
            sys.stdout.write("\n")
    finally:
        if handle:
            handle.close()
    return EXIT_OK


def _cmd_simulate(args) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        config = parse_experiment_config(fh.read())
    if args.seed is not None:
        config.seed = args.seed
    if not config.calibration:
        raise ParameterError("config must name a calibration JSON via 'calibration = path'")
    cal_path = config.calibration
    if not os.path.exists(cal_path):
        relative = os.path.join(os.path.dirname(os.path.abspath(args.config)), cal_path)
        if os.path.exists(relative):
            cal_path = relative
    calibration = CalibrationSummary.from_json(cal_path)
    grid = build_grid(config, calibration)
    metrics = run_experiment(
        grid,
        r_t=config.r_t,
        r_i=config.r_i,
        estimators=config.estimators,
        target=config.target,
        k_v=config.k_v,
        nw_lags=config.nw_lags,
        n_threads=max(1, args.threads),
    )
    handle = _open_out(args)
    out = handle if handle else sys.stdout
    try:
        if args.format == "csv":
            metrics_to_csv(metrics, out)
        else:
            payload = []
            for row in metrics:
                entry = {k: getattr(row, k) for k in row.__dataclass_fields__}
                payload.append(entry)
            json.dump(payload, out, indent=2)
            out.write("\n")
    finally:
        if handle:
            handle.close()
    return EXIT_OK


def main(argv=None) -> int:
    """Run the CLI; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "estimate":
            return _cmd_estimate(args)
        if args.command == "spec-test":
            return _cmd_estimate(args, spec_only=True)
        if args.command == "calibrate":
            return _cmd_calibrate(args)
        if args.command == "simulate":
            return _cmd_simulate(args)
        raise ParameterError(f"unknown command {args.command!r}")
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: cannot read {exc.filename}: {exc.strerror}", file=sys.stderr)
        return EXIT_IO
    except (DataFormatError, AlignmentError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SingularMatrixError, IdentificationError, InsufficientDataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SINGULAR
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit:
        raise
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
