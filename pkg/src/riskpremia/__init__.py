"""Risk-premia estimation for factor pricing models.

Provides the classical two-pass estimator, a sample-splitting IV
estimator that remains reliable when factors are weak or priced
structure is missing from the model, long-run variance and
specification-test machinery, data loaders for monthly return panels,
and a calibrated Monte Carlo engine.
"""

from .errors import (
    AlignmentError,
    DataFormatError,
    IdentificationError,
    InsufficientDataError,
    ParameterError,
    RiskPremiaError,
    SingularMatrixError,
)
from .foursplit import (
    ROTATIONS,
    FourSplitResult,
    FourSplitRiskPremia,
    SplitScheme,
    build_iv_design,
    default_proxy_matrix,
    four_split_estimate,
    make_split_scheme,
    per_rotation_tsls,
)
from .inference import (
    LongRunVariance,
    TestResult,
    newey_west,
    specification_test,
    t_test,
    wald_test,
)
from .linalg import OlsFit, PcaResult, TslsFit, ols, pca, pinv_sym, tsls
from .panel import (
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
from .simulation import (
    CalibrationSummary,
    DgpParams,
    DgpSimulator,
    DgpTruth,
    ExperimentConfig,
    McMetrics,
    bias_decomposition,
    build_grid,
    calibrate,
    draw_panel,
    implied_factor_cov,
    metrics_to_csv,
    parse_experiment_config,
    run_experiment,
)
from .twopass import (
    BetaSet,
    EstimateResult,
    TwoPassRiskPremia,
    cross_section_r2,
    first_pass_betas,
    two_pass_estimate,
)

__version__ = "0.1.0"

__all__ = [
    "ROTATIONS",
    "AlignmentError",
    "BetaSet",
    "CalibrationSummary",
    "DataFormatError",
    "DgpParams",
    "DgpSimulator",
    "DgpTruth",
    "EstimateResult",
    "ExperimentConfig",
    "FactorPanel",
    "FourSplitResult",
    "FourSplitRiskPremia",
    "IdentificationError",
    "InsufficientDataError",
    "LongRunVariance",
    "McMetrics",
    "OlsFit",
    "ParameterError",
    "PcaResult",
    "ReturnsPanel",
    "RiskPremiaError",
    "SingularMatrixError",
    "SplitScheme",
    "TestResult",
    "TslsFit",
    "TwoPassRiskPremia",
    "align",
    "bias_decomposition",
    "build_excess_returns",
    "build_grid",
    "build_iv_design",
    "calibrate",
    "cross_section_r2",
    "default_proxy_matrix",
    "draw_panel",
    "first_pass_betas",
    "four_split_estimate",
    "implied_factor_cov",
    "load_french_factors",
    "load_french_portfolios",
    "load_french_table",
    "make_split_scheme",
    "metrics_to_csv",
    "newey_west",
    "ols",
    "parse_experiment_config",
    "pca",
    "per_rotation_tsls",
    "pinv_sym",
    "read_factors_csv",
    "read_returns_csv",
    "run_experiment",
    "specification_test",
    "t_test",
    "tsls",
    "two_pass_estimate",
    "wald_test",
    "write_factors_csv",
    "write_returns_csv",
]
