"""Shared fixtures: frozen calibrations, synthetic French-format data
files, and discovery of optional real data files."""

from __future__ import annotations

import glob
import os

import numpy as np
import pytest

from riskpremia import DgpParams, draw_panel

from _support import (
    grid_calibration,
    month_labels,
    sweep_calibration,
    write_french_file,
)


@pytest.fixture(scope="session")
def grid_cal():
    return grid_calibration()


@pytest.fixture(scope="session")
def sweep_cal():
    return sweep_calibration()


@pytest.fixture(scope="session")
def synthetic_data_dir(tmp_path_factory, grid_cal):
    """Directory of French-layout CSV files built from one simulated panel.

    Contains raw portfolio returns (excess returns plus a nonzero
    risk-free rate, with two sentinel-coded cells), a factor file with a
    risk-free column and a second monthly block, and a momentum file.
    """
    directory = tmp_path_factory.mktemp("french")
    params = DgpParams(calibration=grid_cal, theta_phi=1.0, alpha=0.1,
                       sigma_xi2=0.1, seed=9000, n_assets=40, n_periods=160)
    returns, factors, _ = draw_panel(params)
    T = returns.n_periods
    periods = month_labels(T)

    rf = 0.25 + 0.05 * (np.arange(T) % 7) / 7.0
    raw = returns.values + rf[None, :]
    raw_rows = raw.T.copy()
    # Two sentinel-coded observations; the loader must map them to zero.
    raw_rows[3, 0] = -99.99
    raw_rows[10, 5] = -99.99
    annual = ("Annual Factors: January-December",
              ["1963,  1.11, 2.22", "1964,  3.33, 4.44"])
    write_french_file(
        directory / "portfolios.csv", periods,
        [f"P{i + 1:02d}" for i in range(returns.n_assets)], raw_rows,
        description="Synthetic portfolio returns", trailer_blocks=[annual])

    style_rf = np.column_stack([factors.values[:, :3], rf])
    second_block = ["(second monthly block, equal weighted)", "," + ",".join(
        ("Mkt-RF", "SMB", "HML", "RF"))]
    second_block += [f"{p}," + ",".join(format(v + 1.0, ".4f") for v in style_rf[t])
                     for t, p in enumerate(periods)]
    write_french_file(
        directory / "factors.csv", periods, ("Mkt-RF", "SMB", "HML", "RF"),
        style_rf, description="Synthetic factors",
        trailer_blocks=[("", second_block)])

    write_french_file(directory / "momentum.csv", periods, ("Mom",),
                      factors.values[:, 3:4], description="Synthetic momentum")
    return directory


def _find_one(directory, pattern):
    hits = sorted(
        path for path in glob.glob(os.path.join(directory, "**", "*"), recursive=True)
        if glob.fnmatch.fnmatch(os.path.basename(path).lower(), pattern.lower())
    )
    return hits[0] if hits else None


@pytest.fixture(scope="session")
def real_data_paths():
    """Locate real monthly data files, or skip the dependent tests.

    Looks in ``$RISKPREMIA_DATA_DIR`` and ``./data`` for the 100
    size/book-to-market portfolio file, the three-factor file, and the
    momentum file.
    """
    candidates = []
    env = os.environ.get("RISKPREMIA_DATA_DIR")
    if env:
        candidates.append(env)
    candidates.append(os.path.join(os.path.dirname(os.path.dirname(__file__)), "data"))
    for directory in candidates:
        if not os.path.isdir(directory):
            continue
        portfolios = _find_one(directory, "*100_portfolios*")
        factors = _find_one(directory, "*f-f_research_data_factors*")
        momentum = _find_one(directory, "*momentum*")
        if portfolios and factors and momentum:
            return {"portfolios": portfolios, "factors": factors,
                    "momentum": momentum}
    pytest.skip("real monthly data files not present (set RISKPREMIA_DATA_DIR "
                "or place them under ./data)")
