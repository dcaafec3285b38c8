"""Numerical kernels: least squares, instrumented regression, PCA, pseudo-inverse.

All solvers work through orthogonal factorizations (QR or SVD) rather than
explicitly inverting normal equations, and raise
:class:`~riskpremia.errors.SingularMatrixError` with a condition estimate
instead of silently returning garbage when a system is numerically rank
deficient.  The reciprocal-condition cutoff for "numerically invertible"
cross-product matrices is ``RCOND_CUTOFF``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import IdentificationError, SingularMatrixError

#: Reciprocal condition number below which a cross-product matrix X'X is
#: treated as singular.
RCOND_CUTOFF = 1e-12


def _gram_rcond(singular_values: np.ndarray) -> float:
    """Reciprocal condition of X'X from the singular values of X."""
    smax = singular_values.max(initial=0.0)
    if smax == 0.0:
        return 0.0
    smin = singular_values.min()
    return float((smin / smax) ** 2)


@dataclass(frozen=True)
class OlsFit:
    """Ordinary least squares fit.

    ``coefficients`` excludes the intercept, which is reported separately
    when one was requested (``None`` otherwise).
    """

    coefficients: np.ndarray
    residuals: np.ndarray
    fitted: np.ndarray
    intercept: float | None = None


def ols(y, X, intercept: bool = False) -> OlsFit:
    """Least-squares regression of ``y`` on the columns of ``X``.

    Parameters
    ----------
    y : (n,) array
    X : (n, k) array
    intercept : bool
        When true a constant column is prepended internally and its
        coefficient returned in ``OlsFit.intercept``.

    Raises
    ------
    SingularMatrixError
        When the design's cross-product is numerically singular.
    ValueError
        When there are not enough rows to identify the coefficients.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, k = X.shape
    if y.shape != (n,):
        raise ValueError(f"y has shape {y.shape}, expected ({n},)")
    design = np.column_stack([np.ones(n), X]) if intercept else X
    if n <= design.shape[1] - 1 or n < design.shape[1]:
        raise ValueError(f"need more than {design.shape[1]} observations, got {n}")
    svals = scipy.linalg.svdvals(design)
    rcond = _gram_rcond(svals)
    if rcond <= RCOND_CUTOFF:
        raise SingularMatrixError("regressor cross-product X'X is singular", condition=rcond)
    coef, *_ = scipy.linalg.lstsq(design, y, lapack_driver="gelsy")
    fitted = design @ coef
    residuals = y - fitted
    if intercept:
        return OlsFit(coefficients=coef[1:], residuals=residuals, fitted=fitted,
                      intercept=float(coef[0]))
    return OlsFit(coefficients=coef, residuals=residuals, fitted=fitted)


@dataclass(frozen=True)
class TslsFit:
    """Two-stage least squares fit.

    ``projected`` holds the instrument-projected regressors (the rows are
    the effective instruments), ``xpzx`` the projected cross-product
    X'P_Z X, and ``zz_inv`` the inverse instrument cross-product, both of
    which downstream covariance formulas reuse.
    """

    coefficients: np.ndarray
    residuals: np.ndarray
    fitted: np.ndarray
    projected: np.ndarray
    xpzx: np.ndarray
    zz_inv: np.ndarray


def tsls(y, X, Z) -> TslsFit:
    """Instrumented least squares of ``y`` on ``X`` using instruments ``Z``.

    Solves ``b = (X'P_Z X)^{-1} X'P_Z y`` where ``P_Z`` projects onto the
    column span of ``Z``.  With ``Z = X`` this reduces to :func:`ols`.

    Raises
    ------
    IdentificationError
        When there are fewer instruments than regressors.
    SingularMatrixError
        When Z'Z or X'P_Z X is numerically singular (for example when the
        instruments are orthogonal to the regressors).
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if Z.ndim == 1:
        Z = Z[:, None]
    n, k = X.shape
    kz = Z.shape[1]
    if Z.shape[0] != n or y.shape != (n,):
        raise ValueError("y, X and Z must share the same number of rows")
    if kz < k:
        raise IdentificationError(f"{kz} instruments cannot identify {k} regressors")

    z_svals = scipy.linalg.svdvals(Z)
    z_rcond = _gram_rcond(z_svals)
    if z_rcond <= RCOND_CUTOFF:
        raise SingularMatrixError("instrument cross-product Z'Z is singular", condition=z_rcond)
    qz, rz = scipy.linalg.qr(Z, mode="economic")
    rz_inv = scipy.linalg.solve_triangular(rz, np.eye(kz))
    zz_inv = rz_inv @ rz_inv.T

    qzx = qz.T @ X
    projected = qz @ qzx  # P_Z X
    xpzx = qzx.T @ qzx
    xpzx = 0.5 * (xpzx + xpzx.T)
    # Condition the projected cross-product against the scale of X itself,
    # not of the projection: instruments orthogonal to the regressors leave
    # a uniformly tiny (but possibly well-shaped) projection behind.
    x_scale = float(scipy.linalg.svdvals(X).max())
    x_smin = float(scipy.linalg.svdvals(qzx).min())
    x_rcond = float((x_smin / x_scale) ** 2) if x_scale > 0 else 0.0
    if x_rcond <= RCOND_CUTOFF:
        raise SingularMatrixError(
            "projected cross-product X'P_Z X is singular "
            "(instruments may be orthogonal to the regressors)",
            condition=x_rcond,
        )
    coef = scipy.linalg.solve(xpzx, qzx.T @ (qz.T @ y), assume_a="pos")
    fitted = X @ coef
    return TslsFit(
        coefficients=coef,
        residuals=y - fitted,
        fitted=fitted,
        projected=projected,
        xpzx=xpzx,
        zz_inv=zz_inv,
    )


@dataclass(frozen=True)
class PcaResult:
    """Principal components of a return panel.

    ``factors`` is ``T x m`` with orthonormal columns (each component's
    path has unit sum of squares, hence variance of roughly ``1/T``);
    ``loadings`` is ``m x N`` and absorbs the scale, so row ``j`` has
    squared norm equal to the component's singular value squared.
    ``explained_fraction`` is each component's share of total variation.
    """

    factors: np.ndarray
    loadings: np.ndarray
    explained_fraction: np.ndarray

    def strengths(self, n_periods: int | None = None) -> np.ndarray:
        """Per-component strength: sum of squared loadings times factor variance."""
        T = self.factors.shape[0] if n_periods is None else n_periods
        return (self.loadings**2).sum(axis=1) / T


def pca(panel_values, n_components: int, demean: bool = True) -> PcaResult:
    """Principal component decomposition of an ``N x T`` return panel.

    The decomposition runs on the ``T x N`` transpose, by default after
    removing each asset's time mean.  Factor paths are normalized to unit
    sum of squares over time, and each component's sign is fixed so that
    its largest-magnitude loading is positive.
    """
    values = np.asarray(panel_values, dtype=float)
    if values.ndim != 2:
        raise ValueError("panel must be a 2-d array of assets x periods")
    n_assets, n_periods = values.shape
    if not 1 <= n_components <= min(n_assets, n_periods):
        raise ValueError(
            f"n_components must be in [1, {min(n_assets, n_periods)}], got {n_components}"
        )
    data = values.T.copy()
    if demean:
        data -= data.mean(axis=0, keepdims=True)
    u, s, vt = scipy.linalg.svd(data, full_matrices=False)
    factors = u[:, :n_components].copy()
    loadings = s[:n_components, None] * vt[:n_components]
    for j in range(n_components):
        i_star = int(np.argmax(np.abs(loadings[j])))
        if loadings[j, i_star] < 0:
            loadings[j] = -loadings[j]
            factors[:, j] = -factors[:, j]
    total = float((s**2).sum())
    explained = (s[:n_components] ** 2) / total if total > 0 else np.zeros(n_components)
    return PcaResult(factors=factors, loadings=loadings, explained_fraction=explained)


def pinv_sym(matrix, rel_tol: float = 1e-12) -> tuple[np.ndarray, int]:
    """Moore-Penrose pseudo-inverse of a symmetric matrix via eigendecomposition.

    Eigenvalues with magnitude at most ``rel_tol`` times the largest
    magnitude are treated as zero.  Returns the pseudo-inverse together
    with the effective rank.

    Raises
    ------
    ValueError
        When the input is not symmetric to a relative tolerance of 1e-10.
    """
    S = np.asarray(matrix, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {S.shape}")
    scale = np.abs(S).max(initial=0.0)
    if scale > 0 and np.abs(S - S.T).max() > 1e-10 * scale:
        raise ValueError("matrix is not symmetric to relative tolerance 1e-10")
    S = 0.5 * (S + S.T)
    eigvals, eigvecs = scipy.linalg.eigh(S)
    cutoff = rel_tol * np.abs(eigvals).max(initial=0.0)
    keep = np.abs(eigvals) > cutoff
    rank = int(keep.sum())
    if rank == 0:
        return np.zeros_like(S), 0
    inv_vals = np.zeros_like(eigvals)
    inv_vals[keep] = 1.0 / eigvals[keep]
    pinv = (eigvecs * inv_vals[None, :]) @ eigvecs.T
    return 0.5 * (pinv + pinv.T), rank
