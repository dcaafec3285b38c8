"""Least squares, instrumented regression, PCA, and symmetric pseudo-inverse."""

import numpy as np
import pytest

from riskpremia import (
    IdentificationError,
    SingularMatrixError,
    ols,
    pca,
    pinv_sym,
    tsls,
)


# ------------------------------------------------------------------------ ols

def test_ols_recovers_exact_coefficients():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((30, 2))
    b = np.array([1.5, -2.0])
    fit = ols(X @ b, X)
    np.testing.assert_allclose(fit.coefficients, b, atol=1e-10)
    np.testing.assert_allclose(fit.residuals, 0.0, atol=1e-10)


def test_ols_bivariate_slope_closed_form():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(200)
    y = 0.7 * x + rng.standard_normal(200)
    fit = ols(y, x, intercept=True)
    xd = x - x.mean()
    slope = float(xd @ (y - y.mean())) / float(xd @ xd)
    assert fit.coefficients.shape == (1,)
    np.testing.assert_allclose(fit.coefficients[0], slope, rtol=1e-12)
    np.testing.assert_allclose(fit.intercept, y.mean() - slope * x.mean(),
                               rtol=1e-12)


def test_ols_residuals_orthogonal_to_design():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((80, 3))
    y = rng.standard_normal(80)
    fit = ols(y, X, intercept=True)
    design = np.column_stack([np.ones(80), X])
    scale = np.abs(design).max() * np.abs(y).max()
    assert np.abs(design.T @ fit.residuals).max() <= 1e-8 * scale


def test_ols_projection_idempotence():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((40, 2))
    y = rng.standard_normal(40)
    first = ols(y, X)
    second = ols(first.fitted, X)
    np.testing.assert_allclose(second.fitted, first.fitted, atol=1e-12)


def test_ols_duplicated_column_raises_with_condition():
    x = np.random.default_rng(4).standard_normal(20)
    with pytest.raises(SingularMatrixError) as info:
        ols(x, np.column_stack([x, x]))
    assert info.value.condition is not None
    assert info.value.condition <= 1e-12


def test_ols_needs_enough_rows():
    with pytest.raises(ValueError, match="observations"):
        ols(np.ones(2), np.eye(2), intercept=True)


def test_ols_shape_mismatch():
    with pytest.raises(ValueError, match="expected"):
        ols(np.ones(3), np.ones((4, 1)))


# ----------------------------------------------------------------------- tsls

def test_tsls_with_self_instruments_equals_ols():
    rng = np.random.default_rng(10)
    X = rng.standard_normal((60, 3))
    y = rng.standard_normal(60)
    np.testing.assert_allclose(tsls(y, X, X).coefficients,
                               ols(y, X).coefficients, atol=1e-10)


def test_tsls_matches_stepwise_matrix_formula():
    rng = np.random.default_rng(11)
    n, k, kz = 50, 2, 4
    Z = rng.standard_normal((n, kz))
    X = Z @ rng.standard_normal((kz, k)) + 0.3 * rng.standard_normal((n, k))
    y = rng.standard_normal(n)
    proj = Z @ np.linalg.solve(Z.T @ Z, Z.T)
    expected = np.linalg.solve(X.T @ proj @ X, X.T @ proj @ y)
    fit = tsls(y, X, Z)
    np.testing.assert_allclose(fit.coefficients, expected, atol=1e-9)
    np.testing.assert_allclose(fit.projected, proj @ X, atol=1e-9)
    np.testing.assert_allclose(fit.xpzx, X.T @ proj @ X, atol=1e-9)
    np.testing.assert_allclose(fit.zz_inv @ (Z.T @ Z), np.eye(kz), atol=1e-9)


def test_tsls_under_identification():
    rng = np.random.default_rng(12)
    with pytest.raises(IdentificationError, match="1 instruments"):
        tsls(rng.standard_normal(20), rng.standard_normal((20, 2)),
             rng.standard_normal((20, 1)))


def test_tsls_orthogonal_instruments_raise():
    n = 24
    X = np.tile([1.0, 1.0, -1.0, -1.0], n // 4)[:, None]
    Z = np.tile([1.0, -1.0, 1.0, -1.0], n // 4)[:, None]
    assert abs(float(X[:, 0] @ Z[:, 0])) < 1e-12
    with pytest.raises(SingularMatrixError, match="orthogonal"):
        tsls(np.random.default_rng(13).standard_normal(n), X, Z)


def test_tsls_singular_instrument_grams_raise():
    rng = np.random.default_rng(14)
    z = rng.standard_normal(30)
    X = rng.standard_normal((30, 1))
    with pytest.raises(SingularMatrixError, match="Z'Z"):
        tsls(rng.standard_normal(30), X, np.column_stack([z, z]))


def test_tsls_row_mismatch():
    with pytest.raises(ValueError, match="same number of rows"):
        tsls(np.ones(5), np.ones((5, 1)), np.ones((6, 1)))


# ------------------------------------------------------------------------ pca

def test_pca_rank_one_panel():
    rng = np.random.default_rng(20)
    a = rng.standard_normal(50)
    b = rng.standard_normal(15)
    result = pca(np.outer(b, a), n_components=1, demean=False)
    np.testing.assert_allclose(result.explained_fraction, [1.0], atol=1e-12)
    path = result.factors[:, 0]
    np.testing.assert_allclose(np.abs(path), np.abs(a) / np.linalg.norm(a),
                               atol=1e-9)
    np.testing.assert_allclose(result.factors.T @ result.factors, [[1.0]],
                               atol=1e-12)


def test_pca_orthonormal_factors_and_eckart_young():
    rng = np.random.default_rng(21)
    panel = rng.standard_normal((30, 90))
    m = 4
    result = pca(panel, n_components=m)
    np.testing.assert_allclose(result.factors.T @ result.factors, np.eye(m),
                               atol=1e-10)
    data = panel.T - panel.T.mean(axis=0, keepdims=True)
    tail = np.linalg.svd(data, compute_uv=False)[m:]
    reconstruction_error = np.linalg.norm(data - result.factors @ result.loadings) ** 2
    np.testing.assert_allclose(reconstruction_error, float((tail**2).sum()),
                               rtol=1e-8)


def test_pca_sign_convention():
    rng = np.random.default_rng(22)
    result = pca(rng.standard_normal((20, 60)), n_components=3)
    for j in range(3):
        row = result.loadings[j]
        assert row[np.argmax(np.abs(row))] > 0


def test_pca_full_rank_reconstructs_exactly():
    rng = np.random.default_rng(23)
    panel = rng.standard_normal((6, 40))
    result = pca(panel, n_components=6)
    data = panel.T - panel.T.mean(axis=0, keepdims=True)
    np.testing.assert_allclose(result.factors @ result.loadings, data, atol=1e-10)
    np.testing.assert_allclose(result.explained_fraction.sum(), 1.0, atol=1e-12)


def test_pca_strengths_definition():
    rng = np.random.default_rng(24)
    panel = rng.standard_normal((10, 30))
    result = pca(panel, n_components=2)
    np.testing.assert_allclose(result.strengths(),
                               (result.loadings**2).sum(axis=1) / 30, rtol=1e-12)
    np.testing.assert_allclose(result.strengths(n_periods=60),
                               (result.loadings**2).sum(axis=1) / 60, rtol=1e-12)


def test_pca_component_count_bounds():
    panel = np.random.default_rng(25).standard_normal((5, 12))
    with pytest.raises(ValueError, match="n_components"):
        pca(panel, n_components=0)
    with pytest.raises(ValueError, match="n_components"):
        pca(panel, n_components=6)
    with pytest.raises(ValueError, match="2-d"):
        pca(np.ones(5), n_components=1)


# ------------------------------------------------------------------- pinv_sym

def test_pinv_identity():
    inverse, rank = pinv_sym(np.eye(3))
    np.testing.assert_allclose(inverse, np.eye(3), atol=1e-12)
    assert rank == 3


def test_pinv_singular_diagonal():
    inverse, rank = pinv_sym(np.diag([2.0, 0.0]), rel_tol=1e-8)
    np.testing.assert_allclose(inverse, np.diag([0.5, 0.0]), atol=1e-12)
    assert rank == 1


def test_pinv_penrose_conditions_on_rank_deficient_matrix():
    rng = np.random.default_rng(30)
    B = rng.standard_normal((6, 3))
    S = B @ B.T  # PSD with rank 3
    P, rank = pinv_sym(S)
    assert rank == 3
    np.testing.assert_allclose(S @ P @ S, S, atol=1e-9)
    np.testing.assert_allclose(P @ S @ P, P, atol=1e-9)
    np.testing.assert_allclose((S @ P).T, S @ P, atol=1e-9)
    np.testing.assert_allclose((P @ S).T, P @ S, atol=1e-9)


def test_pinv_rejects_asymmetric_and_non_square():
    with pytest.raises(ValueError, match="symmetric"):
        pinv_sym(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError, match="square"):
        pinv_sym(np.ones((2, 3)))


def test_pinv_zero_matrix():
    inverse, rank = pinv_sym(np.zeros((2, 2)))
    np.testing.assert_array_equal(inverse, np.zeros((2, 2)))
    assert rank == 0
