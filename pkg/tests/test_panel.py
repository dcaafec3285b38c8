"""Panel types, French-layout loaders, canonical CSV round trips, alignment."""

import io

import numpy as np
import pytest

from riskpremia import (
    AlignmentError,
    DataFormatError,
    FactorPanel,
    ReturnsPanel,
    align,
    build_excess_returns,
    load_french_factors,
    load_french_portfolios,
    load_french_table,
    read_factors_csv,
    read_returns_csv,
    write_factors_csv,
    write_returns_csv,
)

from _support import month_labels, write_french_file


# ---------------------------------------------------------------- panel types

def test_returns_panel_basic_properties():
    panel = ReturnsPanel(assets=("a", "b"), periods=(1, 2, 3),
                         values=[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    assert panel.n_assets == 2
    assert panel.n_periods == 3
    np.testing.assert_array_equal(panel.mean_returns(), [2.0, 5.0])


def test_returns_panel_rejects_bad_shape():
    with pytest.raises(ValueError, match="assets x periods"):
        ReturnsPanel(assets=("a",), periods=(1, 2), values=[[1.0], [2.0]])


def test_returns_panel_rejects_non_finite():
    with pytest.raises(ValueError, match="non-finite"):
        ReturnsPanel(assets=("a",), periods=(1, 2), values=[[1.0, np.nan]])


def test_panel_periods_must_increase():
    with pytest.raises(ValueError, match="strictly increasing"):
        ReturnsPanel(assets=("a",), periods=(2, 2), values=[[1.0, 2.0]])
    with pytest.raises(ValueError, match="strictly increasing"):
        FactorPanel(names=("f",), periods=(3, 1), values=[[1.0], [2.0]])


def test_panel_values_are_immutable():
    panel = ReturnsPanel(assets=("a",), periods=(1,), values=[[1.0]])
    with pytest.raises(ValueError):
        panel.values[0, 0] = 2.0


def test_factor_panel_column_lookup():
    panel = FactorPanel(names=("x", "y"), periods=(1, 2),
                        values=[[1.0, 10.0], [2.0, 20.0]])
    np.testing.assert_array_equal(panel.column("y"), [10.0, 20.0])
    with pytest.raises(KeyError, match="no factor named"):
        panel.column("z")


def test_factor_panel_needs_a_factor():
    with pytest.raises(ValueError):
        FactorPanel(names=(), periods=(1,), values=np.empty((1, 0)))


# ------------------------------------------------------------- French loader

def test_loader_replaces_sentinels_with_zero(tmp_path):
    path = tmp_path / "one_row.csv"
    path.write_text("192607, 1.0, -99.99\n")
    periods, names, values = load_french_table(path)
    assert periods == [192607]
    assert names == ["col_1", "col_2"]
    np.testing.assert_array_equal(values, [[1.0, 0.0]])


def test_loader_reads_header_names_and_skips_description(tmp_path):
    path = tmp_path / "table.csv"
    write_french_file(path, [200001, 200002], ("Mkt-RF", "SMB"),
                      [[1.5, -0.25], [0.75, 2.0]])
    periods, names, values = load_french_table(path)
    assert periods == [200001, 200002]
    assert names == ["Mkt-RF", "SMB"]
    np.testing.assert_allclose(values, [[1.5, -0.25], [0.75, 2.0]])


def test_loader_stops_at_non_monthly_trailer(tmp_path):
    path = tmp_path / "table.csv"
    annual = ("Annual Factors:", ["1999, 9.99, 9.99", "2000, 8.88, 8.88"])
    write_french_file(path, [200001, 200002], ("A", "B"),
                      [[1.0, 2.0], [3.0, 4.0]], trailer_blocks=[annual])
    periods, _, values = load_french_table(path)
    assert periods == [200001, 200002]
    assert values.shape == (2, 2)


def test_loader_block_selector(tmp_path, synthetic_data_dir):
    first = load_french_table(synthetic_data_dir / "factors.csv", block=0)
    second = load_french_table(synthetic_data_dir / "factors.csv", block=1)
    assert first[0] == second[0]
    np.testing.assert_allclose(np.asarray(second[2]), np.asarray(first[2]) + 1.0,
                               atol=1e-12)
    with pytest.raises(DataFormatError, match="no monthly data block"):
        load_french_table(synthetic_data_dir / "factors.csv", block=2)


def test_loader_rejects_ragged_rows(tmp_path):
    path = tmp_path / "ragged.csv"
    path.write_text("200001, 1.0, 2.0\n200002, 3.0\n")
    with pytest.raises(DataFormatError, match="expected 2 values"):
        load_french_table(path)


def test_loader_rejects_bad_numbers(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("200001, 1.0, oops\n")
    with pytest.raises(DataFormatError, match="cannot parse value"):
        load_french_table(path)


def test_loader_requires_a_monthly_block(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("just a description\nno data here\n")
    with pytest.raises(DataFormatError, match="no monthly data block"):
        load_french_table(path)


def test_load_french_portfolios_orientation(tmp_path):
    path = tmp_path / "ports.csv"
    write_french_file(path, [200001, 200002], ("P1", "P2"),
                      [[1.0, 10.0], [2.0, 20.0]])
    panel = load_french_portfolios(path)
    assert panel.assets == ("P1", "P2")
    assert panel.periods == (200001, 200002)
    np.testing.assert_allclose(panel.values, [[1.0, 2.0], [10.0, 20.0]])


def test_load_french_factors_column_selection(tmp_path):
    path = tmp_path / "facs.csv"
    write_french_file(path, [200001, 200002], ("A", "B", "C"),
                      [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    panel = load_french_factors(path, columns=["C", "A"])
    assert panel.names == ("C", "A")
    np.testing.assert_allclose(panel.values, [[3.0, 1.0], [6.0, 4.0]])
    with pytest.raises(DataFormatError, match="missing column"):
        load_french_factors(path, columns=["D"])


def test_synthetic_files_have_expected_shape(synthetic_data_dir):
    ports = load_french_portfolios(synthetic_data_dir / "portfolios.csv")
    assert ports.n_assets == 40
    assert ports.n_periods == 160
    assert np.isfinite(ports.values).all()
    facs = load_french_factors(synthetic_data_dir / "factors.csv")
    assert facs.names == ("Mkt-RF", "SMB", "HML", "RF")


# ------------------------------------------------------------ excess returns

def test_excess_returns_subtracts_risk_free():
    raw = ReturnsPanel(assets=("a",), periods=(1,), values=[[2.0]])
    out = build_excess_returns(raw, [0.5])
    np.testing.assert_array_equal(out.values, [[1.5]])


def test_excess_returns_zero_rate_is_identity():
    raw = ReturnsPanel(assets=("a", "b"), periods=(1, 2),
                       values=[[1.0, 2.0], [3.0, 4.0]])
    out = build_excess_returns(raw, [0.0, 0.0])
    np.testing.assert_array_equal(out.values, raw.values)


def test_excess_returns_hand_computed_case():
    raw = ReturnsPanel(assets=("a", "b", "c"), periods=(1, 2),
                       values=[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    rf = np.array([0.25, 0.5])
    out = build_excess_returns(raw, rf, risk_free_periods=[1, 2])
    expected = np.array([[0.75, 1.5], [2.75, 3.5], [4.75, 5.5]])
    np.testing.assert_array_equal(out.values, expected)


def test_excess_returns_reports_first_period_mismatch():
    raw = ReturnsPanel(assets=("a",), periods=(1, 2), values=[[1.0, 2.0]])
    with pytest.raises(AlignmentError, match="disagree .* 2 vs 3"):
        build_excess_returns(raw, [0.1, 0.1], risk_free_periods=[1, 3])
    with pytest.raises(AlignmentError, match="has 3 periods"):
        build_excess_returns(raw, [0.1, 0.1, 0.1])


# ------------------------------------------------------------------ alignment

def test_align_identical_periods_is_noop():
    returns = ReturnsPanel(assets=("a",), periods=(1, 2), values=[[1.0, 2.0]])
    factors = FactorPanel(names=("f",), periods=(1, 2), values=[[0.1], [0.2]])
    out_r, out_f = align(returns, factors)
    assert out_r is returns
    assert out_f is factors


def test_align_trims_to_overlap():
    returns = ReturnsPanel(assets=("a",), periods=(1, 2, 3),
                           values=[[1.0, 2.0, 3.0]])
    factors = FactorPanel(names=("f",), periods=(2, 3, 4),
                          values=[[0.2], [0.3], [0.4]])
    out_r, out_f = align(returns, factors)
    assert out_r.periods == (2, 3)
    assert out_f.periods == (2, 3)
    np.testing.assert_array_equal(out_r.values, [[2.0, 3.0]])
    np.testing.assert_array_equal(out_f.values, [[0.2], [0.3]])


def test_align_disjoint_raises():
    returns = ReturnsPanel(assets=("a",), periods=(1, 2), values=[[1.0, 2.0]])
    factors = FactorPanel(names=("f",), periods=(5, 6), values=[[0.5], [0.6]])
    with pytest.raises(AlignmentError, match="no overlapping periods"):
        align(returns, factors)


def test_align_is_idempotent():
    returns = ReturnsPanel(assets=("a",), periods=(1, 2, 3),
                           values=[[1.0, 2.0, 3.0]])
    factors = FactorPanel(names=("f",), periods=(2, 3, 4),
                          values=[[0.2], [0.3], [0.4]])
    once_r, once_f = align(returns, factors)
    twice_r, twice_f = align(once_r, once_f)
    assert twice_r is once_r
    assert twice_f is once_f


# ------------------------------------------------------- canonical CSV format

def test_returns_csv_round_trip_is_bit_exact():
    rng = np.random.default_rng(5)
    values = rng.standard_normal((4, 7)) / 3.0
    values[0, 0] = 0.1
    values[1, 2] = -1.0 / 3.0
    panel = ReturnsPanel(assets=("w", "x", "y", "z"),
                         periods=tuple(month_labels(7)), values=values)
    buffer = io.StringIO()
    write_returns_csv(buffer, panel)
    restored = read_returns_csv(io.StringIO(buffer.getvalue()))
    assert restored.assets == panel.assets
    assert restored.periods == panel.periods
    np.testing.assert_array_equal(restored.values, panel.values)


def test_factors_csv_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(6)
    panel = FactorPanel(names=("f1", "f2"), periods=(1, 2, 3),
                        values=rng.standard_normal((3, 2)) * 1e-7)
    path = tmp_path / "factors.csv"
    write_factors_csv(path, panel)
    restored = read_factors_csv(path)
    assert restored.names == panel.names
    np.testing.assert_array_equal(restored.values, panel.values)


def test_canonical_csv_rejects_bad_input():
    with pytest.raises(DataFormatError, match="must start with"):
        read_factors_csv(io.StringIO("time,f\n1,2\n"))
    with pytest.raises(DataFormatError, match="expected 3 cells"):
        read_factors_csv(io.StringIO("period,a,b\n1,2\n"))
    with pytest.raises(DataFormatError, match="line 2"):
        read_factors_csv(io.StringIO("period,a\noops,2\n"))
