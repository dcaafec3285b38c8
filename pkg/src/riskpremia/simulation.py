"""Calibrated Monte Carlo engine for studying weak and missing factors.

The generator mimics a monthly panel of portfolio excess returns: three
strong principal-component paths drive most comovement, a fourth weak
component acts as a potentially missing factor, and the observed factors
(three style factors plus momentum) are noisy linear combinations of the
strong components.  Returns load on the momentum-specific shock through
loadings that mix the missing component's loadings with independent
noise, so the strength of the momentum factor and its correlation with
the missing structure can be dialed independently.  All distributional
parameters come from a :class:`CalibrationSummary` fitted to a real (or
synthetic) panel by :func:`calibrate`.

Random draws are split into named streams, each seeded from the master
seed, the stream name, and the replication indices.  Time-series streams
depend only on the time replication index, cross-section streams on
both, so redrawing a cross section never perturbs the factor paths and
every replication is reproducible in isolation (which also makes
multi-threaded experiment runs deterministic).
"""

from __future__ import annotations

import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ParameterError, RiskPremiaError
from .foursplit import four_split_estimate
from .inference import newey_west
from .linalg import pca
from .panel import FactorPanel, ReturnsPanel, align
from .twopass import BetaSet, first_pass_betas, two_pass_estimate

_Z_975 = 1.959963984540054

# Stream identifiers; the first group varies only with the time-series
# replication index, the second also with the cross-section index.
_TIME_STREAMS = {"pc_paths": 0, "factor_noise": 1, "missing_path": 2,
                 "mom_common": 3, "mom_orthogonal": 4}
_CROSS_STREAMS = {"pc_loadings": 5, "missing_loadings": 6,
                  "mom_loading_noise": 7, "idiosyncratic": 8}


def _stream_rng(seed: int, name: str, rep_t: int, rep_i: int) -> np.random.Generator:
    if name in _TIME_STREAMS:
        key = (_TIME_STREAMS[name], rep_t)
    else:
        key = (_CROSS_STREAMS[name], rep_t, rep_i)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def _psd_sqrt(matrix: np.ndarray, name: str) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=float)
    matrix = 0.5 * (matrix + matrix.T)
    eigvals, eigvecs = scipy.linalg.eigh(matrix)
    floor = -1e-10 * max(eigvals.max(initial=0.0), 1.0)
    if eigvals.min() < floor:
        raise ParameterError(f"{name} is not positive semi-definite")
    return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))[None, :]


@dataclass(frozen=True)
class CalibrationSummary:
    """Moments that pin down the return-panel generator.

    Loadings: ``mu_gamma``/``v_gamma`` for the three strong components,
    ``mu_phi``/``v_phi`` for the weak one, ``sigma_eps2`` for the
    idiosyncratic variance.  Observed factors: intercepts and slopes of
    each on the strong components plus residual (co)variances.
    ``lambda_true`` holds the sample mean of every observed factor, the
    premium vector used by the generator.
    """

    mu_gamma: np.ndarray
    v_gamma: np.ndarray
    mu_phi: float
    v_phi: float
    sigma_eps2: float
    eta0_f: np.ndarray
    eta_f: np.ndarray
    sigma_res: np.ndarray
    eta0_mom: float
    eta_mom: np.ndarray
    sigma_mom2: float
    lambda_true: np.ndarray
    n_assets: int
    n_periods: int
    factor_names: tuple[str, ...]
    pc_strengths: np.ndarray = field(default=None, repr=False)
    pc_explained: np.ndarray = field(default=None, repr=False)
    factor_strengths: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        def arr(name, value, shape):
            out = np.asarray(value, dtype=float)
            if out.shape != shape:
                raise ParameterError(f"{name} must have shape {shape}, got {out.shape}")
            return out

        object.__setattr__(self, "mu_gamma", arr("mu_gamma", self.mu_gamma, (3,)))
        object.__setattr__(self, "v_gamma", arr("v_gamma", self.v_gamma, (3, 3)))
        object.__setattr__(self, "eta0_f", arr("eta0_f", self.eta0_f, (3,)))
        object.__setattr__(self, "eta_f", arr("eta_f", self.eta_f, (3, 3)))
        object.__setattr__(self, "sigma_res", arr("sigma_res", self.sigma_res, (3, 3)))
        object.__setattr__(self, "eta_mom", arr("eta_mom", self.eta_mom, (3,)))
        object.__setattr__(self, "lambda_true", arr("lambda_true", self.lambda_true, (4,)))
        object.__setattr__(self, "factor_names", tuple(self.factor_names))
        for name in ("v_phi", "sigma_eps2", "sigma_mom2"):
            if not getattr(self, name) >= 0:
                raise ParameterError(f"{name} must be non-negative")
        for name in ("pc_strengths", "pc_explained", "factor_strengths"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, np.asarray(value, dtype=float))

    def to_dict(self) -> dict:
        def listify(x):
            return np.asarray(x).tolist() if x is not None else None

        return {
            "mu_gamma": listify(self.mu_gamma),
            "v_gamma": listify(self.v_gamma),
            "mu_phi": float(self.mu_phi),
            "v_phi": float(self.v_phi),
            "sigma_eps2": float(self.sigma_eps2),
            "eta0_f": listify(self.eta0_f),
            "eta_f": listify(self.eta_f),
            "sigma_res": listify(self.sigma_res),
            "eta0_mom": float(self.eta0_mom),
            "eta_mom": listify(self.eta_mom),
            "sigma_mom2": float(self.sigma_mom2),
            "lambda_true": listify(self.lambda_true),
            "n_assets": int(self.n_assets),
            "n_periods": int(self.n_periods),
            "factor_names": list(self.factor_names),
            "pc_strengths": listify(self.pc_strengths),
            "pc_explained": listify(self.pc_explained),
            "factor_strengths": listify(self.factor_strengths),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CalibrationSummary":
        return cls(**data)

    def to_json(self, file) -> None:
        if hasattr(file, "write"):
            json.dump(self.to_dict(), file, indent=2)
        else:
            with open(file, "w", encoding="utf-8") as fh:
                json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def from_json(cls, file) -> "CalibrationSummary":
        if hasattr(file, "read"):
            data = json.load(file)
        else:
            with open(file, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        return cls.from_dict(data)


def implied_factor_cov(calibration: CalibrationSummary, n_periods: int | None = None) -> np.ndarray:
    """Population covariance of the four observed factors under the generator.

    The strong-component paths have covariance ``I/T``, so the observed
    factors inherit ``eta_f eta_f' / T`` plus their residual covariance;
    momentum adds its full residual variance and covaries with the other
    factors only through the shared components.
    """
    T = calibration.n_periods if n_periods is None else n_periods
    eta_f = calibration.eta_f
    eta_mom = calibration.eta_mom
    top_left = eta_f @ eta_f.T / T + calibration.sigma_res
    cross = eta_f @ eta_mom / T
    mom_var = eta_mom @ eta_mom / T + calibration.sigma_mom2
    cov = np.empty((4, 4))
    cov[:3, :3] = top_left
    cov[:3, 3] = cross
    cov[3, :3] = cross
    cov[3, 3] = mom_var
    return 0.5 * (cov + cov.T)


def calibrate(returns: ReturnsPanel, ff_factors: FactorPanel, momentum) -> CalibrationSummary:
    """Fit the generator's moments to a panel of excess returns.

    Parameters
    ----------
    returns : ReturnsPanel
    ff_factors : FactorPanel with three columns (the style factors).
    momentum : FactorPanel with one column, or a vector aligned with
        ``ff_factors``.

    Four principal components are extracted from the demeaned panel (unit
    time-norm paths, so each component's variance is about ``1/T``); the
    first three are the strong components, the fourth the weak one.
    Observed factors are regressed on the strong components to obtain
    their intercepts, slopes and residual moments, and ``lambda_true``
    collects all four sample means.
    """
    if ff_factors.n_factors != 3:
        raise ParameterError(f"expected three style factors, got {ff_factors.n_factors}")
    if isinstance(momentum, FactorPanel):
        if momentum.n_factors != 1:
            raise ParameterError("momentum panel must have exactly one column")
        merged = FactorPanel(
            names=ff_factors.names + momentum.names,
            periods=ff_factors.periods,
            values=np.column_stack([ff_factors.values, _align_column(ff_factors, momentum)]),
        )
    else:
        mom = np.asarray(momentum, dtype=float)
        if mom.shape != (ff_factors.n_periods,):
            raise ParameterError(
                f"momentum vector must have length {ff_factors.n_periods}, got {mom.shape}"
            )
        merged = FactorPanel(
            names=ff_factors.names + ("MOM",),
            periods=ff_factors.periods,
            values=np.column_stack([ff_factors.values, mom]),
        )
    returns, merged = align(returns, merged)
    N = returns.n_assets
    T = returns.n_periods

    decomposition = pca(returns.values, n_components=4, demean=True)
    paths = decomposition.factors          # T x 4, orthonormal columns
    loadings = decomposition.loadings      # 4 x N
    strong = paths[:, :3]
    gamma = loadings[:3].T                 # N x 3
    phi = loadings[3]                      # N

    demeaned = returns.values.T - returns.values.T.mean(axis=0, keepdims=True)
    residual_panel = demeaned - paths @ loadings
    sigma_eps2 = float(np.mean(residual_panel**2))

    ff_values = merged.values[:, :3]
    mom_values = merged.values[:, 3]
    eta0_f = np.empty(3)
    eta_f = np.empty((3, 3))
    ff_resid = np.empty((T, 3))
    design = np.column_stack([np.ones(T), strong])
    coef_all, *_ = scipy.linalg.lstsq(design, ff_values, lapack_driver="gelsy")
    eta0_f[:] = coef_all[0]
    eta_f[:] = coef_all[1:].T
    ff_resid[:] = ff_values - design @ coef_all
    sigma_res = ff_resid.T @ ff_resid / T

    coef_mom, *_ = scipy.linalg.lstsq(design, mom_values[:, None], lapack_driver="gelsy")
    mom_resid = mom_values - design @ coef_mom[:, 0]
    eta0_mom = float(coef_mom[0, 0])
    eta_mom = coef_mom[1:, 0].copy()
    sigma_mom2 = float(np.mean(mom_resid**2))

    beta_set = first_pass_betas(returns, FactorPanel(
        names=merged.names[:3], periods=merged.periods, values=ff_values))
    factor_strengths = (beta_set.betas**2).sum(axis=0) * ff_values.var(axis=0)

    return CalibrationSummary(
        mu_gamma=gamma.mean(axis=0),
        v_gamma=np.cov(gamma.T, ddof=1),
        mu_phi=float(phi.mean()),
        v_phi=float(phi.var(ddof=1)),
        sigma_eps2=sigma_eps2,
        eta0_f=eta0_f,
        eta_f=eta_f,
        sigma_res=sigma_res,
        eta0_mom=eta0_mom,
        eta_mom=eta_mom,
        sigma_mom2=sigma_mom2,
        lambda_true=np.concatenate([ff_values.mean(axis=0), [mom_values.mean()]]),
        n_assets=N,
        n_periods=T,
        factor_names=merged.names,
        pc_strengths=decomposition.strengths(T),
        pc_explained=decomposition.explained_fraction,
        factor_strengths=factor_strengths,
    )


def _align_column(ff_factors: FactorPanel, momentum: FactorPanel) -> np.ndarray:
    if list(momentum.periods) != list(ff_factors.periods):
        raise ParameterError("momentum panel must share the style factors' periods")
    return momentum.values[:, 0]


@dataclass(frozen=True)
class DgpParams:
    """One grid point of the simulation design.

    ``theta_phi`` scales the missing-factor loadings (0 removes the
    missing structure entirely), ``alpha`` ties the momentum loadings to
    the missing loadings, ``sigma_xi2`` is the variance of the
    independent part of the momentum loadings, and ``varphi`` is the
    (tiny) share of momentum variance orthogonal to returns.
    """

    calibration: CalibrationSummary
    theta_phi: float = 1.0
    alpha: float = 0.1
    sigma_xi2: float = 0.3
    varphi: float = 0.001
    seed: int = 0
    n_assets: int | None = None
    n_periods: int | None = None

    def __post_init__(self):
        if not self.theta_phi >= 0:
            raise ParameterError(f"theta_phi must be non-negative, got {self.theta_phi}")
        if not self.sigma_xi2 > 0:
            raise ParameterError(f"sigma_xi2 must be positive, got {self.sigma_xi2}")
        if not 0 < self.varphi < 1:
            raise ParameterError(f"varphi must lie in (0, 1), got {self.varphi}")
        if not np.isfinite(self.alpha):
            raise ParameterError("alpha must be finite")


@dataclass(frozen=True)
class DgpTruth:
    """Everything the generator knows that an estimator does not.

    ``premia_expost`` is the premium vector shifted by the realized
    factor-mean error, the natural centering for finite-sample bias
    accounting; ``factor_cov`` is the population factor covariance.
    """

    premia: np.ndarray
    betas: np.ndarray
    missing_loadings: np.ndarray
    missing_path: np.ndarray
    mom_loadings: np.ndarray
    idiosyncratic: np.ndarray
    factor_mean: np.ndarray
    premia_expost: np.ndarray
    factor_cov: np.ndarray
    pc_loadings: np.ndarray
    pc_paths: np.ndarray
    mom_common_path: np.ndarray


def draw_panel(
    params: DgpParams, rep_t: int = 0, rep_i: int = 0
) -> tuple[ReturnsPanel, FactorPanel, DgpTruth]:
    """Draw one simulated panel for replication ``(rep_t, rep_i)``.

    Two calls with equal seeds and indices produce identical output; a
    change of ``rep_i`` alone redraws only the cross-section streams, so
    the factor paths are unchanged.
    """
    cal = params.calibration
    N = cal.n_assets if params.n_assets is None else int(params.n_assets)
    T = cal.n_periods if params.n_periods is None else int(params.n_periods)
    if N < 1 or T < 1:
        raise ParameterError("panel dimensions must be positive")
    sqrt_T = math.sqrt(T)
    seed = params.seed

    # Time-series streams.
    strong = _stream_rng(seed, "pc_paths", rep_t, rep_i).standard_normal((T, 3)) / sqrt_T
    noise_sqrt = _psd_sqrt(cal.sigma_res, "sigma_res")
    w = _stream_rng(seed, "factor_noise", rep_t, rep_i).standard_normal((T, 3)) @ noise_sqrt.T
    missing = _stream_rng(seed, "missing_path", rep_t, rep_i).standard_normal(T) / sqrt_T
    sd_common = math.sqrt((1.0 - params.varphi) * cal.sigma_mom2)
    sd_orth = math.sqrt(params.varphi * cal.sigma_mom2)
    u = _stream_rng(seed, "mom_common", rep_t, rep_i).standard_normal(T) * sd_common
    v = _stream_rng(seed, "mom_orthogonal", rep_t, rep_i).standard_normal(T) * sd_orth

    factors_f = cal.eta0_f[None, :] + strong @ cal.eta_f.T + w
    mom = cal.eta0_mom + strong @ cal.eta_mom + u + v

    # Cross-section streams.
    gamma_sqrt = _psd_sqrt(cal.v_gamma, "v_gamma")
    gamma = cal.mu_gamma[None, :] + (
        _stream_rng(seed, "pc_loadings", rep_t, rep_i).standard_normal((N, 3)) @ gamma_sqrt.T
    )
    phi = params.theta_phi * (
        cal.mu_phi
        + math.sqrt(cal.v_phi)
        * _stream_rng(seed, "missing_loadings", rep_t, rep_i).standard_normal(N)
    )
    xi = (
        math.sqrt(params.sigma_xi2)
        * _stream_rng(seed, "mom_loading_noise", rep_t, rep_i).standard_normal(N)
    )
    eps = (
        math.sqrt(cal.sigma_eps2)
        * _stream_rng(seed, "idiosyncratic", rep_t, rep_i).standard_normal((N, T))
    )

    if sd_common <= 0:
        raise ParameterError("momentum common shock has zero variance")
    delta = (params.alpha * phi / sqrt_T + xi) / sd_common

    factor_cov = implied_factor_cov(cal, n_periods=T)
    rcond = np.linalg.cond(factor_cov)
    if not np.isfinite(rcond) or rcond > 1e12:
        raise ParameterError("implied factor covariance is numerically singular")

    cov_with_returns = np.column_stack([
        gamma @ cal.eta_f.T / T,
        gamma @ cal.eta_mom / T + (1.0 - params.varphi) * cal.sigma_mom2 * delta,
    ])
    betas = scipy.linalg.solve(factor_cov, cov_with_returns.T, assume_a="pos").T

    lam = cal.lambda_true
    base = gamma @ strong.T + np.outer(phi, missing) + np.outer(delta, u) + eps
    values = base + (betas @ lam)[:, None]

    factor_values = np.column_stack([factors_f, mom])
    factor_mean = np.concatenate([cal.eta0_f, [cal.eta0_mom]])
    premia_expost = lam + factor_values.mean(axis=0) - factor_mean

    periods = tuple(range(1, T + 1))
    returns = ReturnsPanel(
        assets=tuple(f"asset_{i + 1:03d}" for i in range(N)),
        periods=periods,
        values=values,
    )
    factors = FactorPanel(names=cal.factor_names, periods=periods, values=factor_values)
    truth = DgpTruth(
        premia=lam.copy(),
        betas=betas,
        missing_loadings=phi,
        missing_path=missing,
        mom_loadings=delta,
        idiosyncratic=eps,
        factor_mean=factor_mean,
        premia_expost=premia_expost,
        factor_cov=factor_cov,
        pc_loadings=gamma,
        pc_paths=strong,
        mom_common_path=u,
    )
    return returns, factors, truth


class DgpSimulator:
    """Stateful wrapper over :func:`draw_panel` with named redraw scopes.

    ``simulate("new_cross_section")`` advances only the cross-section
    replication index, ``simulate("new_time_series")`` the time index,
    and ``simulate("both")`` advances time and resets the cross section.
    """

    def __init__(self, params: DgpParams):
        self.params = params
        self.rep_t = 0
        self.rep_i = 0
        self._started = False

    def simulate(self, draw_scope: str = "both"):
        if draw_scope not in ("both", "new_time_series", "new_cross_section"):
            raise ParameterError(f"unknown draw scope {draw_scope!r}")
        if self._started:
            if draw_scope == "both":
                self.rep_t += 1
                self.rep_i = 0
            elif draw_scope == "new_time_series":
                self.rep_t += 1
            else:
                self.rep_i += 1
        self._started = True
        return draw_panel(self.params, self.rep_t, self.rep_i)


def bias_decomposition(
    truth: DgpTruth, beta_set: BetaSet, factors: FactorPanel
) -> tuple[np.ndarray, np.ndarray]:
    """Infeasible attenuation and omitted-structure bias terms.

    Both use the generator's knowledge: the attenuation term aggregates
    each asset's first-pass estimation noise (model residuals filtered
    through the population factor covariance), the omitted-structure
    term aggregates the interaction between estimated betas,
    missing-factor loadings and the missing path's sample averages.
    Their sum approximates the two-pass estimator's deviation from the
    ex-post premium vector.
    """
    F = np.asarray(factors.values, dtype=float)
    T = F.shape[0]
    sqrt_T = math.sqrt(T)
    f_demeaned = F - F.mean(axis=0, keepdims=True)
    sigma_f = truth.factor_cov

    # Model residual relative to the estimated factor structure: common
    # components and idiosyncratic shocks net of the beta-spanned part.
    # The missing-factor channel is excluded here; it is priced separately
    # through the omitted-structure term below.
    eps = (
        truth.pc_loadings @ truth.pc_paths.T
        + np.outer(truth.mom_loadings, truth.mom_common_path)
        + truth.idiosyncratic
        - truth.betas @ (F - truth.factor_mean[None, :]).T
    )
    u_terms = scipy.linalg.solve(sigma_f, (eps @ f_demeaned).T / T, assume_a="pos").T

    missing = truth.missing_path.reshape(T, -1)
    mu = truth.missing_loadings.reshape(eps.shape[0], -1)
    eta_v = missing.sum(axis=0) / sqrt_T
    eta_t = scipy.linalg.solve(sigma_f, f_demeaned.T @ missing, assume_a="pos") / sqrt_T

    lam_tilde = truth.premia_expost
    betas = beta_set.betas
    gram = betas.T @ betas
    attenuation = -scipy.linalg.solve(gram, (u_terms.T @ u_terms) @ lam_tilde, assume_a="pos")
    shift = eta_v - eta_t.T @ lam_tilde
    omitted = scipy.linalg.solve(gram, betas.T @ (mu @ shift), assume_a="pos") / sqrt_T
    return attenuation, omitted


def mean_absolute_row_bias(errors: np.ndarray) -> float:
    """Average over time draws of the absolute mean cross-section error.

    ``errors`` is ``R_t x R_i`` with NaN marking failed replications;
    rows with no valid cell are skipped.
    """
    errors = np.asarray(errors, dtype=float)
    finite = np.isfinite(errors)
    counts = finite.sum(axis=1)
    valid = counts > 0
    if not valid.any():
        return float("nan")
    sums = np.where(finite, errors, 0.0).sum(axis=1)
    row_means = sums[valid] / counts[valid]
    return float(np.abs(row_means).mean())


@dataclass(frozen=True)
class McMetrics:
    """Aggregated Monte Carlo metrics for one grid point and estimator."""

    estimator: str
    theta_phi: float
    alpha: float
    sigma_xi2: float
    varphi: float
    bias: float
    abs_bias: float
    std_dev: float
    rejection_rate: float | None
    missing_strength: float
    target_strength: float
    loading_correlation: float
    r_t: int
    r_i: int
    n_failures: int
    avg_std_error: float | None = None


_KNOWN_ESTIMATORS = ("two-pass", "four-split", "truth")


def run_experiment(
    grid,
    r_t: int,
    r_i: int,
    estimators=("two-pass", "four-split"),
    target: int | None = None,
    k_v: int = 1,
    nw_lags: int = 4,
    n_threads: int = 1,
) -> list[McMetrics]:
    """Run the nested Monte Carlo design over a parameter grid.

    For each grid point, ``r_t`` time-series draws each carry ``r_i``
    cross-section draws; every requested estimator runs on every
    replication.  ``target`` selects the premium component under study
    (the last factor, momentum, by default).  Failed replications
    (singular designs and the like) are counted and excluded.  Results
    are deterministic for a fixed grid regardless of ``n_threads``.
    """
    estimators = tuple(estimators)
    for name in estimators:
        if name not in _KNOWN_ESTIMATORS:
            raise ParameterError(f"unknown estimator {name!r}; choose from {_KNOWN_ESTIMATORS}")
    if r_t < 1 or r_i < 1:
        raise ParameterError("r_t and r_i must be at least 1")

    metrics: list[McMetrics] = []
    for params in grid:
        n_factors = 4
        tgt = n_factors - 1 if target is None else int(target)
        estimates = {name: np.full((r_t, r_i), np.nan) for name in estimators}
        std_errors = {name: np.full((r_t, r_i), np.nan) for name in estimators}
        missing_strength = np.full((r_t, r_i), np.nan)
        target_strength = np.full((r_t, r_i), np.nan)
        loading_corr = np.full((r_t, r_i), np.nan)

        def run_cell(cell, params=params, tgt=tgt, estimates=estimates,
                     std_errors=std_errors, missing_strength=missing_strength,
                     target_strength=target_strength, loading_corr=loading_corr):
            rt, ri = cell
            returns, factors, truth = draw_panel(params, rt, ri)
            T = returns.n_periods
            lrv = newey_west(factors, lags=nw_lags)
            missing_strength[rt, ri] = float((truth.missing_loadings**2).sum() / T)
            mom_path = factors.values[:, tgt]
            target_strength[rt, ri] = float(
                (truth.betas[:, tgt] ** 2).sum() * mom_path.var()
            )
            phi = truth.missing_loadings
            beta_t = truth.betas[:, tgt]
            if phi.std() > 0 and beta_t.std() > 0:
                loading_corr[rt, ri] = float(np.corrcoef(phi, beta_t)[0, 1])
            for name in estimators:
                try:
                    if name == "two-pass":
                        res = two_pass_estimate(returns, factors, lrv)
                        estimates[name][rt, ri] = res.premia[tgt]
                        std_errors[name][rt, ri] = res.std_errors[tgt]
                    elif name == "four-split":
                        res = four_split_estimate(returns, factors, lrv, k_v=k_v)
                        estimates[name][rt, ri] = res.premia[tgt]
                        std_errors[name][rt, ri] = res.std_errors[tgt]
                    else:  # truth oracle
                        estimates[name][rt, ri] = truth.premia[tgt]
                except RiskPremiaError:
                    pass

        cells = list(itertools.product(range(r_t), range(r_i)))
        if n_threads > 1:
            with ThreadPoolExecutor(max_workers=n_threads) as pool:
                list(pool.map(run_cell, cells))
        else:
            for cell in cells:
                run_cell(cell)

        lam_target = float(params.calibration.lambda_true[tgt])
        with np.errstate(invalid="ignore"):
            avg_missing = float(np.nanmean(missing_strength))
            avg_target = float(np.nanmean(target_strength))
            all_nan = np.all(~np.isfinite(loading_corr))
            avg_corr = float("nan") if all_nan else float(np.nanmean(loading_corr))

        for name in estimators:
            est = estimates[name]
            ok = np.isfinite(est)
            n_failures = int((~ok).sum())
            errors = est - lam_target
            if ok.any():
                bias = float(errors[ok].mean())
                abs_bias = mean_absolute_row_bias(errors)
                std_dev = float(est[ok].std(ddof=1)) if ok.sum() > 1 else float("nan")
            else:
                bias = abs_bias = std_dev = float("nan")
            if name == "truth":
                rejection = None
                avg_se = None
            else:
                se = std_errors[name]
                usable = ok & np.isfinite(se) & (se > 0)
                if usable.any():
                    rejects = np.abs(errors[usable]) / se[usable] > _Z_975
                    rejection = float(rejects.mean())
                    avg_se = float(se[usable].mean())
                else:
                    rejection = float("nan")
                    avg_se = float("nan")
            metrics.append(McMetrics(
                estimator=name,
                theta_phi=params.theta_phi,
                alpha=params.alpha,
                sigma_xi2=params.sigma_xi2,
                varphi=params.varphi,
                bias=bias,
                abs_bias=abs_bias,
                std_dev=std_dev,
                rejection_rate=rejection,
                missing_strength=avg_missing,
                target_strength=avg_target,
                loading_correlation=avg_corr,
                r_t=r_t,
                r_i=r_i,
                n_failures=n_failures,
                avg_std_error=avg_se,
            ))
    return metrics


_CSV_COLUMNS = (
    "theta_phi", "alpha", "sigma_xi2", "varphi",
    "missing_strength", "target_strength", "loading_correlation",
    "estimator", "bias", "abs_bias", "std_dev", "rejection_rate",
)


def metrics_to_csv(metrics, file) -> None:
    """Write experiment metrics as a deterministic full-precision CSV."""
    if hasattr(file, "write"):
        _metrics_stream(metrics, file)
    else:
        with open(file, "w", encoding="utf-8", newline="\n") as fh:
            _metrics_stream(metrics, fh)


def _metrics_stream(metrics, fh) -> None:
    fh.write(",".join(_CSV_COLUMNS) + "\n")
    for row in metrics:
        cells = []
        for col in _CSV_COLUMNS:
            value = getattr(row, col)
            if value is None:
                cells.append("")
            elif isinstance(value, str):
                cells.append(value)
            else:
                cells.append(format(float(value), ".17g"))
        fh.write(",".join(cells) + "\n")


@dataclass
class ExperimentConfig:
    """Parsed experiment configuration (one grid, shared run settings)."""

    theta_phi: tuple[float, ...] = (1.0,)
    sigma_xi2: tuple[float, ...] = (0.3,)
    alpha: float = 0.1
    varphi: float = 0.001
    r_t: int = 20
    r_i: int = 20
    seed: int = 0
    estimators: tuple[str, ...] = ("two-pass", "four-split")
    k_v: int = 1
    nw_lags: int = 4
    target: int | None = None
    n_assets: int | None = None
    n_periods: int | None = None
    calibration: str | None = None


_LIST_KEYS = {"theta_phi", "sigma_xi2", "estimators"}
_FLOAT_KEYS = {"alpha", "varphi"}
_INT_KEYS = {"r_t", "r_i", "seed", "k_v", "nw_lags", "target", "n_assets", "n_periods"}


def parse_experiment_config(text: str) -> ExperimentConfig:
    """Parse ``key = value`` experiment configuration text.

    Lists are comma separated; ``#`` starts a comment.  Unknown keys are
    rejected so typos fail loudly.
    """
    config = ExperimentConfig()
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"config line {ln}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        try:
            if key in _LIST_KEYS:
                items = [v.strip() for v in value.split(",") if v.strip()]
                if key == "estimators":
                    setattr(config, key, tuple(items))
                else:
                    setattr(config, key, tuple(float(v) for v in items))
            elif key in _FLOAT_KEYS:
                setattr(config, key, float(value))
            elif key in _INT_KEYS:
                setattr(config, key, int(value))
            elif key == "calibration":
                config.calibration = value
            else:
                raise ParameterError(f"config line {ln}: unknown key {key!r}")
        except ValueError:
            raise ParameterError(f"config line {ln}: cannot parse value {value!r} for {key}") from None
    if not config.theta_phi or not config.sigma_xi2:
        raise ParameterError("config must leave at least one grid point")
    return config


def build_grid(config: ExperimentConfig, calibration: CalibrationSummary) -> list[DgpParams]:
    """Expand a configuration into the cartesian product of grid values."""
    grid = []
    for theta, s_xi2 in itertools.product(config.theta_phi, config.sigma_xi2):
        grid.append(DgpParams(
            calibration=calibration,
            theta_phi=theta,
            alpha=config.alpha,
            sigma_xi2=s_xi2,
            varphi=config.varphi,
            seed=config.seed,
            n_assets=config.n_assets,
            n_periods=config.n_periods,
        ))
    return grid
