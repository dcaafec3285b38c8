"""Aligned return and factor panels plus the CSV loaders that build them.

Two kinds of files are understood:

* Ken French data library exports: several lines of free-text description,
  an optional column-name header, then monthly rows of the form
  ``YYYYMM, v1, v2, ...``.  A file usually holds several blocks (value
  weighted, equal weighted, annual); only monthly blocks are read and by
  default only the first one.  Sentinel codes for missing observations are
  replaced with zero.
* The package's own canonical CSV format: a ``period,<names...>`` header
  followed by one row per period, values written with 17 significant
  digits so that a write/read round trip is bit exact.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from ._validation import as_float_matrix, as_float_vector
from .errors import AlignmentError, DataFormatError

#: Sentinel values used by the French data library for missing observations.
DEFAULT_MISSING_CODES = (-99.99, -999.0)

_MONTH_RE = re.compile(r"^\s*(\d{6})\s*$")


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.flags.writeable = False
    return out


def _check_periods(periods: tuple[int, ...]) -> None:
    if len(periods) == 0:
        raise ValueError("panel must cover at least one period")
    for a, b in zip(periods, periods[1:]):
        if not a < b:
            raise ValueError(f"period labels must be strictly increasing, got {a} before {b}")


@dataclass(frozen=True)
class ReturnsPanel:
    """Excess returns for ``N`` assets over ``T`` periods, in percent per month.

    ``values`` has one row per asset and one column per period.  Instances
    are immutable: the value array is marked read-only on construction.
    """

    assets: tuple[str, ...]
    periods: tuple[int, ...]
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "assets", tuple(str(a) for a in self.assets))
        object.__setattr__(self, "periods", tuple(int(p) for p in self.periods))
        values = as_float_matrix(self.values, "returns")
        if values.shape != (len(self.assets), len(self.periods)):
            raise ValueError(
                f"returns must be assets x periods = {(len(self.assets), len(self.periods))}, "
                f"got {values.shape}"
            )
        _check_periods(self.periods)
        object.__setattr__(self, "values", _freeze(values))

    @property
    def n_assets(self) -> int:
        return len(self.assets)

    @property
    def n_periods(self) -> int:
        return len(self.periods)

    def mean_returns(self) -> np.ndarray:
        """Per-asset time averages, the cross-sectional regressand."""
        return self.values.mean(axis=1)


@dataclass(frozen=True)
class FactorPanel:
    """Observed factor realizations, one column per factor over ``T`` periods."""

    names: tuple[str, ...]
    periods: tuple[int, ...]
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(str(n) for n in self.names))
        object.__setattr__(self, "periods", tuple(int(p) for p in self.periods))
        values = as_float_matrix(self.values, "factors")
        if values.shape != (len(self.periods), len(self.names)):
            raise ValueError(
                f"factors must be periods x names = {(len(self.periods), len(self.names))}, "
                f"got {values.shape}"
            )
        if len(self.names) < 1:
            raise ValueError("factor panel needs at least one factor")
        _check_periods(self.periods)
        object.__setattr__(self, "values", _freeze(values))

    @property
    def n_factors(self) -> int:
        return len(self.names)

    @property
    def n_periods(self) -> int:
        return len(self.periods)

    def column(self, name: str) -> np.ndarray:
        """Return one factor's path by name."""
        try:
            j = self.names.index(name)
        except ValueError:
            raise KeyError(f"no factor named {name!r}; have {self.names}") from None
        return self.values[:, j]


def _split_csv_line(line: str) -> list[str]:
    return [cell.strip() for cell in line.rstrip("\n").split(",")]


def load_french_table(
    path,
    missing_codes=DEFAULT_MISSING_CODES,
    block: int = 0,
) -> tuple[list[int], list[str], np.ndarray]:
    """Parse one monthly block of a French-library CSV export.

    Parameters
    ----------
    path : path-like
        File to read.
    missing_codes : iterable of float
        Values replaced by 0.0 (the library's missing-data sentinels).
    block : int
        Which monthly block to read; 0 selects the first.

    Returns
    -------
    (periods, names, values)
        Periods as ``YYYYMM`` integers, column names (synthesized as
        ``col_1..col_K`` when the file has no header line), and a
        ``T x K`` float array.
    """
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        lines = fh.readlines()

    codes = {float(c) for c in missing_codes}
    blocks_seen = -1
    i = 0
    n_lines = len(lines)
    while i < n_lines:
        cells = _split_csv_line(lines[i])
        if cells and _MONTH_RE.match(cells[0]) and len(cells) >= 2:
            blocks_seen += 1
            if blocks_seen == block:
                break
            # Skip the remainder of this monthly block.
            while i < n_lines:
                cells = _split_csv_line(lines[i])
                if not (cells and _MONTH_RE.match(cells[0]) and len(cells) >= 2):
                    break
                i += 1
            continue
        i += 1
    else:
        raise DataFormatError(f"{path}: no monthly data block found (block={block})")

    start = i
    n_cols = len(_split_csv_line(lines[start])) - 1

    names = [f"col_{j + 1}" for j in range(n_cols)]
    for j in range(start - 1, -1, -1):
        prev = _split_csv_line(lines[j])
        if any(cell for cell in prev):
            # A header names the value columns; the date column label is
            # usually empty and is dropped either way.
            if len(prev) == n_cols + 1:
                candidate = prev[1:]
            elif len(prev) == n_cols:
                candidate = prev
            else:
                break
            if any(cell for cell in candidate):
                names = [cell if cell else f"col_{k + 1}" for k, cell in enumerate(candidate)]
            break

    periods: list[int] = []
    rows: list[list[float]] = []
    while i < n_lines:
        cells = _split_csv_line(lines[i])
        if not (cells and _MONTH_RE.match(cells[0])):
            break
        if len(cells) - 1 != n_cols:
            raise DataFormatError(
                f"{path}, line {i + 1}: expected {n_cols} values, got {len(cells) - 1}"
            )
        row = []
        for k, cell in enumerate(cells[1:]):
            try:
                value = float(cell)
            except ValueError:
                raise DataFormatError(
                    f"{path}, line {i + 1}: cannot parse value {cell!r} in column {k + 2}"
                ) from None
            row.append(0.0 if value in codes else value)
        periods.append(int(cells[0]))
        rows.append(row)
        i += 1

    values = np.asarray(rows, dtype=float)
    if not np.all(np.isfinite(values)):
        raise DataFormatError(f"{path}: non-finite values after sentinel cleaning")
    return periods, names, values


def load_french_portfolios(
    path,
    missing_codes=DEFAULT_MISSING_CODES,
    block: int = 0,
) -> ReturnsPanel:
    """Load a portfolio-return file as a (raw, not excess) returns panel."""
    periods, names, values = load_french_table(path, missing_codes=missing_codes, block=block)
    return ReturnsPanel(assets=tuple(names), periods=tuple(periods), values=values.T)


def load_french_factors(
    path,
    columns: list[str] | None = None,
    missing_codes=DEFAULT_MISSING_CODES,
    block: int = 0,
) -> FactorPanel:
    """Load a factor file, optionally selecting a subset of columns by name."""
    periods, names, values = load_french_table(path, missing_codes=missing_codes, block=block)
    if columns is not None:
        try:
            idx = [names.index(c) for c in columns]
        except ValueError as exc:
            raise DataFormatError(f"{path}: missing column ({exc}); available: {names}") from None
        names = [names[j] for j in idx]
        values = values[:, idx]
    return FactorPanel(names=tuple(names), periods=tuple(periods), values=values)


def build_excess_returns(
    raw_returns: ReturnsPanel,
    risk_free,
    risk_free_periods=None,
) -> ReturnsPanel:
    """Subtract the per-period risk-free rate from every asset's raw return.

    ``risk_free`` is a length-``T`` vector matching the panel's periods; when
    ``risk_free_periods`` is given it must agree with the panel's periods
    exactly, and the first mismatch is reported.
    """
    rf = as_float_vector(risk_free, "risk_free")
    if risk_free_periods is not None:
        rf_periods = [int(p) for p in risk_free_periods]
        if rf_periods != list(raw_returns.periods):
            for a, b in zip(raw_returns.periods, rf_periods):
                if a != b:
                    raise AlignmentError(
                        f"risk-free periods disagree with returns starting at {a} vs {b}"
                    )
            raise AlignmentError(
                f"risk-free series covers {len(rf_periods)} periods, "
                f"returns cover {raw_returns.n_periods}"
            )
    if rf.shape[0] != raw_returns.n_periods:
        raise AlignmentError(
            f"risk-free series has {rf.shape[0]} periods, returns have {raw_returns.n_periods}"
        )
    return ReturnsPanel(
        assets=raw_returns.assets,
        periods=raw_returns.periods,
        values=raw_returns.values - rf[None, :],
    )


def align(returns: ReturnsPanel, factors: FactorPanel) -> tuple[ReturnsPanel, FactorPanel]:
    """Restrict both panels to their common periods, preserving order.

    Raises :class:`AlignmentError` when the intersection is empty.  Applying
    ``align`` twice gives the same panels as applying it once.
    """
    common = sorted(set(returns.periods) & set(factors.periods))
    if not common:
        raise AlignmentError(
            f"no overlapping periods between returns ({returns.periods[0]}..{returns.periods[-1]}) "
            f"and factors ({factors.periods[0]}..{factors.periods[-1]})"
        )
    if list(returns.periods) == common and list(factors.periods) == common:
        return returns, factors
    r_idx = [returns.periods.index(p) for p in common]
    f_idx = [factors.periods.index(p) for p in common]
    trimmed_returns = ReturnsPanel(
        assets=returns.assets,
        periods=tuple(common),
        values=returns.values[:, r_idx],
    )
    trimmed_factors = FactorPanel(
        names=factors.names,
        periods=tuple(common),
        values=factors.values[f_idx, :],
    )
    return trimmed_returns, trimmed_factors


def _format_value(x: float) -> str:
    return format(float(x), ".17g")


def write_csv(file, periods, names, values: np.ndarray) -> None:
    """Write the canonical ``period,<names...>`` CSV with full precision.

    ``values`` is ``T x K`` (one row per period).  Accepts an open text file
    or a path.
    """
    values = np.asarray(values, dtype=float)
    if hasattr(file, "write"):
        _write_csv_stream(file, periods, names, values)
    else:
        with open(file, "w", encoding="utf-8", newline="\n") as fh:
            _write_csv_stream(fh, periods, names, values)


def _write_csv_stream(fh, periods, names, values: np.ndarray) -> None:
    fh.write("period," + ",".join(str(n) for n in names) + "\n")
    for t, p in enumerate(periods):
        fh.write(str(int(p)) + "," + ",".join(_format_value(v) for v in values[t]) + "\n")


def read_csv(file) -> tuple[list[int], list[str], np.ndarray]:
    """Read a canonical CSV written by :func:`write_csv`."""
    if hasattr(file, "read"):
        lines = file.read().splitlines()
    else:
        with open(file, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("period"):
        raise DataFormatError("canonical CSV must start with a 'period,...' header")
    names = lines[0].split(",")[1:]
    periods: list[int] = []
    rows: list[list[float]] = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != len(names) + 1:
            raise DataFormatError(f"line {ln}: expected {len(names) + 1} cells, got {len(cells)}")
        try:
            periods.append(int(cells[0]))
            rows.append([float(c) for c in cells[1:]])
        except ValueError as exc:
            raise DataFormatError(f"line {ln}: {exc}") from None
    return periods, names, np.asarray(rows, dtype=float)


def write_returns_csv(file, panel: ReturnsPanel) -> None:
    write_csv(file, panel.periods, panel.assets, panel.values.T)


def read_returns_csv(file) -> ReturnsPanel:
    periods, names, values = read_csv(file)
    return ReturnsPanel(assets=tuple(names), periods=tuple(periods), values=values.T)


def write_factors_csv(file, panel: FactorPanel) -> None:
    write_csv(file, panel.periods, panel.names, panel.values)


def read_factors_csv(file) -> FactorPanel:
    periods, names, values = read_csv(file)
    return FactorPanel(names=tuple(names), periods=tuple(periods), values=values)
