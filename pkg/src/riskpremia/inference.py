"""Long-run variance estimation and hypothesis tests on estimated premia."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.stats

from .errors import InsufficientDataError, ParameterError
from .linalg import pinv_sym


@dataclass(frozen=True)
class LongRunVariance:
    """Bartlett-kernel long-run covariance of demeaned factor paths."""

    omega: np.ndarray
    lags: int


def newey_west(factors, lags: int = 4) -> LongRunVariance:
    """Newey-West long-run covariance with Bartlett weights.

    Computes ``Gamma_0 + sum_{l=1..L} (1 - l/(L+1)) (Gamma_l + Gamma_l')``
    on demeaned paths, where ``Gamma_l = (1/T) sum_t f_t f_{t-l}'``.  With
    ``lags=0`` this is exactly the sample covariance with denominator
    ``T``.  The result is positive semi-definite and invariant to adding a
    constant to any factor.

    Parameters
    ----------
    factors : FactorPanel or (T, k) array
    lags : int
        Number of autocovariance lags; must satisfy ``0 <= lags < T``.
    """
    values = np.asarray(getattr(factors, "values", factors), dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    T = values.shape[0]
    if lags < 0:
        raise ParameterError(f"lags must be non-negative, got {lags}")
    if lags >= T:
        raise InsufficientDataError(f"lags={lags} requires more than {T} periods")
    demeaned = values - values.mean(axis=0, keepdims=True)
    omega = demeaned.T @ demeaned / T
    for lag in range(1, lags + 1):
        gamma = demeaned[lag:].T @ demeaned[:-lag] / T
        weight = 1.0 - lag / (lags + 1.0)
        omega = omega + weight * (gamma + gamma.T)
    return LongRunVariance(omega=0.5 * (omega + omega.T), lags=lags)


@dataclass(frozen=True)
class TestResult:
    """Outcome of a single hypothesis test."""

    statistic: float
    dof: int
    p_value: float
    decision_at_5pct: str
    details: dict = field(default_factory=dict)


def t_test(result, component: int, null_value: float = 0.0) -> TestResult:
    """Two-sided asymptotic t-test on one premium component.

    ``result`` is any estimate object exposing ``premia`` and
    ``std_errors``.  The statistic is compared against the standard normal
    distribution.
    """
    premia = np.asarray(result.premia, dtype=float)
    std_errors = np.asarray(result.std_errors, dtype=float)
    se = float(std_errors[component])
    if not se > 0.0:
        raise ParameterError(f"standard error for component {component} is not positive ({se})")
    stat = (float(premia[component]) - null_value) / se
    p_value = 2.0 * scipy.stats.norm.sf(abs(stat))
    decision = "reject" if p_value < 0.05 else "fail to reject"
    return TestResult(statistic=float(stat), dof=1, p_value=float(p_value),
                      decision_at_5pct=decision)


def wald_test(premia, covariance, restriction=None, null_values=None) -> TestResult:
    """Wald test of equality restrictions on a premia vector.

    Parameters
    ----------
    premia : (k,) array
    covariance : (k, k) symmetric array
    restriction : sequence of int, optional
        Indices of the tested components; all of them by default.
    null_values : float or array, optional
        Hypothesized values for the restricted components (zero by default).

    The statistic is ``d' V^+ d`` with ``V`` the restricted covariance
    block inverted by pseudo-inverse; degrees of freedom equal the
    effective rank of ``V``.  It is invariant under invertible linear
    reparameterizations of the restrictions.
    """
    premia = np.asarray(premia, dtype=float)
    covariance = np.asarray(covariance, dtype=float)
    if restriction is None:
        restriction = np.arange(premia.shape[0])
    restriction = np.asarray(restriction, dtype=int)
    if null_values is None:
        null = np.zeros(restriction.shape[0])
    else:
        null = np.broadcast_to(np.asarray(null_values, dtype=float), restriction.shape).copy()
    d = premia[restriction] - null
    v_sub = covariance[np.ix_(restriction, restriction)]
    v_pinv, rank = pinv_sym(v_sub)
    stat = float(d @ v_pinv @ d)
    stat = max(stat, 0.0)
    dof = rank if rank > 0 else restriction.shape[0]
    p_value = float(scipy.stats.chi2.sf(stat, dof))
    decision = "reject" if p_value < 0.05 else "fail to reject"
    details = {}
    if rank < restriction.shape[0]:
        details["rank_deficient_weight"] = True
    return TestResult(statistic=stat, dof=dof, p_value=p_value,
                      decision_at_5pct=decision, details=details)


def specification_test(result, factor_means) -> TestResult:
    """Test whether estimated premia equal the average factor realizations.

    Under correct pricing with tradable factors the premia should line up
    with the factors' sample means; the statistic is a Wald form in the
    difference ``d = premia - mean(factors)``.

    * For the split-sample IV estimator the weight is the pseudo-inverse of
      the cross-sectional covariance block (``sigma_iv``), which is exactly
      the asymptotic covariance of ``d``.
    * For the two-pass estimator the weight is the pseudo-inverse of the
      estimator covariance minus the factor-mean covariance, the usual
      contrast-variance construction.

    A rank-deficient weight matrix triggers the pseudo-inverse fallback and
    is flagged in ``details``.
    """
    premia = np.asarray(result.premia, dtype=float)
    means = np.asarray(factor_means, dtype=float)
    if means.shape != premia.shape:
        raise ValueError(f"factor means shape {means.shape} does not match premia {premia.shape}")
    d = premia - means

    sigma_iv = getattr(result, "sigma_iv", None)
    if sigma_iv is not None:
        weight_basis = np.asarray(sigma_iv, dtype=float)
    else:
        mean_var = result.diagnostics.get("mean_variance")
        if mean_var is None:
            raise ValueError(
                "two-pass result lacks the 'mean_variance' diagnostic needed "
                "for the specification test"
            )
        weight_basis = np.asarray(result.covariance, dtype=float) - np.asarray(mean_var, dtype=float)

    v_pinv, rank = pinv_sym(weight_basis)
    stat = max(float(d @ v_pinv @ d), 0.0)
    dof = rank if rank > 0 else premia.shape[0]
    p_value = float(scipy.stats.chi2.sf(stat, dof))
    decision = "reject" if p_value < 0.05 else "fail to reject"
    details = {}
    if rank < premia.shape[0]:
        details["rank_deficient_weight"] = True
    eigvals = np.linalg.eigvalsh(0.5 * (weight_basis + weight_basis.T))
    if eigvals.min() < -1e-10 * max(abs(eigvals).max(), 1e-300):
        details["non_psd_weight"] = True
    return TestResult(statistic=stat, dof=dof, p_value=p_value,
                      decision_at_5pct=decision, details=details)
