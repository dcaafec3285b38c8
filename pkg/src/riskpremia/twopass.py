"""Classical two-pass estimation of factor risk premia.

First pass: per-asset time-series regressions of excess returns on the
observed factors.  Second pass: a cross-sectional regression of average
excess returns on the estimated betas, without an intercept by default.
The reported covariance adds the factor-mean uncertainty term
``Omega / T`` to a heteroskedasticity-robust cross-sectional sandwich.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator

from ._validation import check_same_periods
from .errors import InsufficientDataError, SingularMatrixError
from .inference import LongRunVariance, newey_west
from .linalg import RCOND_CUTOFF, _gram_rcond
from .panel import FactorPanel, ReturnsPanel


@dataclass(frozen=True)
class BetaSet:
    """First-pass regression output for every asset over one time window.

    ``betas`` is ``N x k``; ``residuals`` is ``N x |window|`` and each row
    is orthogonal to the demeaned factors within the window.
    """

    betas: np.ndarray
    intercepts: np.ndarray
    residuals: np.ndarray
    sample_range: np.ndarray


def first_pass_betas(
    returns: ReturnsPanel,
    factors: FactorPanel,
    window=None,
) -> BetaSet:
    """Time-series betas for all assets, computed jointly on one window.

    Parameters
    ----------
    returns, factors : aligned panels sharing the same periods.
    window : sequence of int, optional
        Positional time indices to use; the full sample by default.

    The per-asset regressions share a common demeaned-factor cross-product,
    so the whole panel is solved with one factorization.
    """
    check_same_periods(returns, factors)
    T = returns.n_periods
    idx = np.arange(T) if window is None else np.asarray(window, dtype=int)
    k = factors.n_factors
    if idx.shape[0] <= k + 1:
        raise InsufficientDataError(
            f"window of {idx.shape[0]} periods cannot identify {k} betas plus an intercept"
        )
    F = factors.values[idx, :]
    R = returns.values[:, idx]
    F_mean = F.mean(axis=0)
    Fd = F - F_mean
    gram = Fd.T @ Fd
    rcond = _gram_rcond(scipy.linalg.svdvals(Fd))
    if rcond <= RCOND_CUTOFF:
        raise SingularMatrixError(
            "factor covariance within the window is singular", condition=rcond
        )
    betas = scipy.linalg.solve(gram, Fd.T @ R.T, assume_a="pos").T
    intercepts = R.mean(axis=1) - betas @ F_mean
    residuals = R - intercepts[:, None] - betas @ F.T
    return BetaSet(betas=betas, intercepts=intercepts, residuals=residuals, sample_range=idx)


@dataclass(frozen=True)
class EstimateResult:
    """Estimated premia with covariance and free-form diagnostics."""

    premia: np.ndarray
    covariance: np.ndarray
    std_errors: np.ndarray
    method: str
    diagnostics: dict = field(default_factory=dict)


def two_pass_estimate(
    returns: ReturnsPanel,
    factors: FactorPanel,
    lrv: LongRunVariance | np.ndarray,
    shanken: bool = False,
    intercept: bool = False,
    beta_set: BetaSet | None = None,
) -> EstimateResult:
    """Two-pass premia estimate with a robust covariance.

    Parameters
    ----------
    returns, factors : aligned panels.
    lrv : LongRunVariance or (k, k) array
        Long-run covariance of the factors, used for the ``Omega/T``
        factor-mean term.
    shanken : bool
        When true, multiply the cross-sectional sandwich by the classical
        errors-in-variables correction ``1 + premia' SigmaF^{-1} premia``.
    intercept : bool
        When true the second pass includes a zero-beta intercept, reported
        in diagnostics; premia remain the slopes on the betas.

    The covariance is ``G^{-1} S0 G^{-1} / N + Omega / T`` with
    ``G = beta'beta / N`` and ``S0`` the residual-weighted outer-product of
    betas from the cross-sectional regression.
    """
    omega = lrv.omega if isinstance(lrv, LongRunVariance) else np.asarray(lrv, dtype=float)
    if beta_set is None:
        beta_set = first_pass_betas(returns, factors)
    betas = beta_set.betas
    N, k = betas.shape
    T = returns.n_periods
    mean_returns = returns.mean_returns()

    design = np.column_stack([np.ones(N), betas]) if intercept else betas
    svals = scipy.linalg.svdvals(design)
    rcond = _gram_rcond(svals)
    if rcond <= RCOND_CUTOFF:
        raise SingularMatrixError("cross-sectional beta design is singular", condition=rcond)
    gram = design.T @ design / N
    coef = scipy.linalg.solve(gram, design.T @ mean_returns / N, assume_a="pos")
    residuals = mean_returns - design @ coef
    premia = coef[1:] if intercept else coef

    weighted = design * residuals[:, None]
    s0 = weighted.T @ weighted / N
    gram_inv = scipy.linalg.inv(gram)
    sandwich = gram_inv @ s0 @ gram_inv / N
    if intercept:
        sandwich = sandwich[1:, 1:]
    if shanken:
        factor_cov = np.cov(factors.values.T, ddof=1)
        factor_cov = np.atleast_2d(factor_cov)
        correction = 1.0 + float(premia @ scipy.linalg.solve(factor_cov, premia, assume_a="pos"))
        sandwich = sandwich * correction
    mean_variance = omega / T
    covariance = sandwich + mean_variance
    covariance = 0.5 * (covariance + covariance.T)
    std_errors = np.sqrt(np.clip(np.diag(covariance), 0.0, None))

    diagnostics = {
        "mean_variance": mean_variance,
        "design_rcond": rcond,
        "n_assets": N,
        "n_periods": T,
        "shanken": shanken,
    }
    if intercept:
        diagnostics["zero_beta_rate"] = float(coef[0])
    return EstimateResult(
        premia=premia,
        covariance=covariance,
        std_errors=std_errors,
        method="two-pass",
        diagnostics=diagnostics,
    )


def cross_section_r2(betas: BetaSet, premia, mean_returns) -> float:
    """Uncentered R-squared of the no-intercept cross-sectional fit."""
    mean_returns = np.asarray(mean_returns, dtype=float)
    premia = np.asarray(premia, dtype=float)
    residuals = mean_returns - betas.betas @ premia
    total = float(mean_returns @ mean_returns)
    if total == 0.0:
        return 1.0 if float(residuals @ residuals) == 0.0 else 0.0
    return 1.0 - float(residuals @ residuals) / total


class TwoPassRiskPremia(BaseEstimator):
    """Scikit-learn style wrapper around :func:`two_pass_estimate`.

    Parameters
    ----------
    nw_lags : int
        Newey-West lags for the factor long-run variance.
    shanken : bool
        Apply the errors-in-variables correction to the sandwich term.
    intercept : bool
        Include a zero-beta intercept in the cross-sectional pass.

    Attributes (after ``fit``)
    --------------------------
    lambda_ : (k,) premia estimates
    covariance_, std_errors_ : sampling uncertainty
    betas_ : first-pass :class:`BetaSet`
    r_squared_ : cross-sectional fit
    result_ : the underlying :class:`EstimateResult`
    """

    def __init__(self, nw_lags: int = 4, shanken: bool = False, intercept: bool = False):
        self.nw_lags = nw_lags
        self.shanken = shanken
        self.intercept = intercept

    def fit(self, returns: ReturnsPanel, factors: FactorPanel) -> "TwoPassRiskPremia":
        check_same_periods(returns, factors)
        lrv = newey_west(factors, lags=self.nw_lags)
        beta_set = first_pass_betas(returns, factors)
        result = two_pass_estimate(
            returns, factors, lrv,
            shanken=self.shanken, intercept=self.intercept, beta_set=beta_set,
        )
        self.long_run_variance_ = lrv
        self.result_ = result
        self.lambda_ = result.premia
        self.covariance_ = result.covariance
        self.std_errors_ = result.std_errors
        self.betas_ = beta_set
        self.r_squared_ = cross_section_r2(beta_set, result.premia, returns.mean_returns())
        return self
