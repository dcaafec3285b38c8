"""Sample-splitting IV estimation of risk premia.

The sample is cut into four equal time blocks and betas are estimated
separately on each.  For every cyclic rotation of the blocks, average
excess returns are regressed on the first block's betas (plus a
lower-dimensional proxy built from the difference of two blocks' betas,
which absorbs missing-factor structure), instrumented by the other two
blocks' betas.  Because beta estimation noise is independent across
blocks, the instruments are uncorrelated with the regressors' measurement
error, removing the attenuation and omitted-structure biases that affect
the classical two-pass estimator when factors are weak.  The final
estimate averages the four rotations; its covariance combines the stacked
per-rotation moment conditions with the factor-mean uncertainty term.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator

from ._validation import check_same_periods
from .errors import IdentificationError, InsufficientDataError, SingularMatrixError
from .inference import LongRunVariance, newey_west
from .linalg import RCOND_CUTOFF
from .panel import FactorPanel, ReturnsPanel
from .twopass import BetaSet, first_pass_betas

#: Cyclic block orderings; rotation j uses blocks (j, j+1) for regressors
#: and (j+2, j+3) for instruments, indices modulo four.
ROTATIONS = ((0, 1, 2, 3), (1, 2, 3, 0), (2, 3, 0, 1), (3, 0, 1, 2))


@dataclass(frozen=True)
class SplitScheme:
    """Partition of the time axis into four disjoint estimation blocks."""

    subsets: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]
    block_length: int


def make_split_scheme(n_periods: int, interleaved: bool = False) -> SplitScheme:
    """Four blocks of ``n_periods // 4`` periods each.

    Contiguous blocks by default; ``interleaved`` assigns periods round
    robin instead.  Periods beyond ``4 * (n_periods // 4)`` belong to no
    block (they still enter full-sample averages).  Requires at least 8
    periods so every block has at least two.
    """
    tau = n_periods // 4
    if tau < 2:
        raise InsufficientDataError(
            f"four splits need at least 8 periods, got {n_periods}"
        )
    if interleaved:
        subsets = tuple(np.arange(j, 4 * tau, 4) for j in range(4))
    else:
        subsets = tuple(np.arange(j * tau, (j + 1) * tau) for j in range(4))
    return SplitScheme(subsets=subsets, block_length=tau)


def default_proxy_matrix(k_v: int, k_f: int) -> np.ndarray:
    """Default weighting that maps beta differences to proxy regressors: (I | 0)."""
    if k_v > k_f:
        raise IdentificationError(
            f"proxy dimension k_v={k_v} cannot exceed the number of factors {k_f}"
        )
    return np.eye(k_v, k_f)


def build_iv_design(
    beta_sets: list[BetaSet],
    rotation: tuple[int, int, int, int],
    a_matrix: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Regressors and instruments for one rotation.

    Regressors stack the first block's betas with ``A`` times the
    difference between the first and second blocks' betas (the proxy for
    loadings on unobserved structure).  Instruments stack the third
    block's betas with the difference between the third and fourth
    blocks' betas.
    """
    j1, j2, j3, j4 = rotation
    b1 = beta_sets[j1].betas
    b2 = beta_sets[j2].betas
    b3 = beta_sets[j3].betas
    b4 = beta_sets[j4].betas
    a_matrix = np.asarray(a_matrix, dtype=float)
    k_v = a_matrix.shape[0]
    if k_v:
        X = np.column_stack([b1, (b1 - b2) @ a_matrix.T])
    else:
        X = b1.copy()
    Z = np.column_stack([b3, b3 - b4])
    return X, Z


@dataclass(frozen=True)
class RotationFit:
    """One rotation's instrumented regression.

    ``effective_instruments`` holds the instrument-projected regressors
    (row ``i`` is the moment vector that multiplies asset ``i``'s
    residual), and ``g_matrix`` the normalized projected cross-product.
    """

    coefficients: np.ndarray
    residuals: np.ndarray
    effective_instruments: np.ndarray
    g_matrix: np.ndarray


def per_rotation_tsls(y, X, Z) -> RotationFit:
    """Instrumented regression tolerant of redundant instrument columns.

    The projection onto the instrument span uses a least-squares solve, so
    exactly collinear instruments (which arise when split betas coincide)
    reduce the projection rather than aborting.  A singular projected
    cross-product ``X'P_Z X`` still raises, since then the regressors are
    genuinely under-identified.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    n, k = X.shape
    if Z.shape[1] < k:
        raise IdentificationError(f"{Z.shape[1]} instruments cannot identify {k} regressors")
    coef_zx, *_ = scipy.linalg.lstsq(Z, X, lapack_driver="gelsd")
    projected = Z @ coef_zx
    xpzx = X.T @ projected
    xpzx = 0.5 * (xpzx + xpzx.T)
    # Reference scale is X itself: weak or irrelevant instruments shrink the
    # whole projection, which a scale-free condition number would not see.
    x_scale = float(scipy.linalg.svdvals(X).max())
    p_smin = float(scipy.linalg.svdvals(projected).min())
    rcond = float((p_smin / x_scale) ** 2) if x_scale > 0 else 0.0
    if rcond <= RCOND_CUTOFF:
        raise SingularMatrixError(
            "projected cross-product X'P_Z X is singular", condition=rcond
        )
    coef = scipy.linalg.solve(xpzx, projected.T @ y, assume_a="pos")
    residuals = y - X @ coef
    return RotationFit(
        coefficients=coef,
        residuals=residuals,
        effective_instruments=projected,
        g_matrix=xpzx / n,
    )


@dataclass(frozen=True)
class FourSplitResult:
    """Split-sample IV estimate.

    ``sigma_iv`` is the cross-sectional block of the covariance (the
    weight used by the specification test); ``covariance`` adds the
    factor-mean term ``Omega / T``.
    """

    premia: np.ndarray
    premia_per_rotation: np.ndarray
    proxy_coefficients: np.ndarray
    sigma_iv: np.ndarray
    covariance: np.ndarray
    std_errors: np.ndarray
    method: str = "four-split"
    diagnostics: dict = field(default_factory=dict)


def four_split_estimate(
    returns: ReturnsPanel,
    factors: FactorPanel,
    lrv: LongRunVariance | np.ndarray,
    k_v: int = 1,
    a_matrix=None,
    interleaved: bool = False,
) -> FourSplitResult:
    """Estimate premia by split-sample IV with four block rotations.

    Parameters
    ----------
    returns, factors : aligned panels.
    lrv : LongRunVariance or (k_F, k_F) array
        Long-run factor covariance for the factor-mean uncertainty term.
    k_v : int
        Dimension of the missing-structure proxy; 0 disables the proxy and
        must not exceed the number of factors.
    a_matrix : (k_v, k_F) array, optional
        Weighting applied to beta differences to form the proxy; the
        leading-identity default selects the first ``k_v`` differences.
        Must have full row rank.
    interleaved : bool
        Use round-robin period assignment instead of contiguous blocks.
    """
    check_same_periods(returns, factors)
    omega = lrv.omega if isinstance(lrv, LongRunVariance) else np.asarray(lrv, dtype=float)
    k_f = factors.n_factors
    T = returns.n_periods
    N = returns.n_assets
    if not 0 <= k_v <= k_f:
        raise IdentificationError(f"k_v must be between 0 and k_F={k_f}, got {k_v}")
    if a_matrix is None:
        a_matrix = default_proxy_matrix(k_v, k_f)
    else:
        a_matrix = np.asarray(a_matrix, dtype=float)
        if a_matrix.shape != (k_v, k_f):
            raise IdentificationError(
                f"a_matrix must have shape ({k_v}, {k_f}), got {a_matrix.shape}"
            )
        if k_v and np.linalg.matrix_rank(a_matrix) < k_v:
            raise IdentificationError("a_matrix must have full row rank")

    scheme = make_split_scheme(T, interleaved=interleaved)
    beta_sets = [first_pass_betas(returns, factors, window=subset) for subset in scheme.subsets]
    y = returns.mean_returns()
    k = k_f + k_v

    fits: list[RotationFit] = []
    for j, rotation in enumerate(ROTATIONS):
        X, Z = build_iv_design(beta_sets, rotation, a_matrix)
        try:
            fits.append(per_rotation_tsls(y, X, Z))
        except (SingularMatrixError, IdentificationError) as exc:
            raise type(exc)(f"rotation {j + 1}: {exc}") from exc

    premia_per_rotation = np.vstack([fit.coefficients[:k_f] for fit in fits])
    proxy_coefficients = np.vstack([fit.coefficients[k_f:] for fit in fits])
    premia = premia_per_rotation.mean(axis=0)

    # Stacked moment contributions: block j of row i is the effective
    # instrument times asset i's rotation-j residual.
    stacked = np.hstack([
        fit.effective_instruments * fit.residuals[:, None] for fit in fits
    ])
    sigma0 = stacked.T @ stacked / N
    selector = np.zeros((k_f, 4 * k))
    for j, fit in enumerate(fits):
        g_inv = scipy.linalg.inv(fit.g_matrix)
        selector[:, j * k:(j + 1) * k] = 0.25 * g_inv[:k_f, :]
    sigma_iv = selector @ sigma0 @ selector.T / N
    sigma_iv = 0.5 * (sigma_iv + sigma_iv.T)
    covariance = sigma_iv + omega / T
    covariance = 0.5 * (covariance + covariance.T)
    std_errors = np.sqrt(np.clip(np.diag(covariance), 0.0, None))

    diagnostics = {
        "mean_variance": omega / T,
        "block_length": scheme.block_length,
        "k_v": k_v,
        "a_matrix": a_matrix,
        "n_assets": N,
        "n_periods": T,
        "interleaved": interleaved,
    }
    return FourSplitResult(
        premia=premia,
        premia_per_rotation=premia_per_rotation,
        proxy_coefficients=proxy_coefficients,
        sigma_iv=sigma_iv,
        covariance=covariance,
        std_errors=std_errors,
        diagnostics=diagnostics,
    )


class FourSplitRiskPremia(BaseEstimator):
    """Scikit-learn style wrapper around :func:`four_split_estimate`.

    Parameters mirror the function; after ``fit`` the premia are in
    ``lambda_`` with ``covariance_``, ``std_errors_``, ``sigma_iv_`` and
    the full :class:`FourSplitResult` in ``result_``.
    """

    def __init__(self, k_v: int = 1, a_matrix=None, nw_lags: int = 4,
                 interleaved: bool = False):
        self.k_v = k_v
        self.a_matrix = a_matrix
        self.nw_lags = nw_lags
        self.interleaved = interleaved

    def fit(self, returns: ReturnsPanel, factors: FactorPanel) -> "FourSplitRiskPremia":
        check_same_periods(returns, factors)
        lrv = newey_west(factors, lags=self.nw_lags)
        result = four_split_estimate(
            returns, factors, lrv,
            k_v=self.k_v, a_matrix=self.a_matrix, interleaved=self.interleaved,
        )
        self.long_run_variance_ = lrv
        self.result_ = result
        self.lambda_ = result.premia
        self.covariance_ = result.covariance
        self.std_errors_ = result.std_errors
        self.sigma_iv_ = result.sigma_iv
        return self
