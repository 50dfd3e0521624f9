"""Panel threshold regression toolkit.

Estimation of regime-switching panel models by sequential least squares
over a trimmed threshold grid, bootstrap tests for the number of regimes,
likelihood-ratio confidence sets for threshold locations, OLS/2SLS regime
regression with Sargan and Wald diagnostics, panel unit-root testing, and
seeded Monte Carlo harnesses that double as the verification oracle.
"""

__version__ = "0.1.0"

from .diagnostics import (
    IpsResult,
    RegimeDescriptives,
    VarStats,
    correlation_matrix,
    ips_test,
    regime_descriptives,
)
from .errors import ConfigError, DataError, EstimationError, PanelThreshError
from .inference import (
    BootstrapTestResult,
    ThresholdCI,
    additional_threshold_test,
    critical_value,
    linearity_test,
    threshold_ci,
)
from .panel import (
    PanelDataset,
    VariableRole,
    composite_index,
    make_lag,
    period_average,
    regime_indicator,
    within_transform,
)
from .regression import (
    RegressionResult,
    SarganTest,
    WaldTest,
    estimate_regime_equation,
    ols,
    two_sls,
)
from .simulate import (
    MonteCarloSummary,
    ThresholdDGP,
    TruthRecord,
    benchmark_dgp,
    default_spec,
    dummy_ols_oracle,
    monte_carlo,
    simulate_threshold_panel,
)
from .threshold import (
    ThresholdFit,
    ThresholdSpec,
    candidate_grid,
    estimate_multiple,
    estimate_single,
    fit_at,
    ssr_at,
)

__all__ = [
    "__version__",
    "BootstrapTestResult",
    "ConfigError",
    "DataError",
    "EstimationError",
    "IpsResult",
    "MonteCarloSummary",
    "PanelDataset",
    "PanelThreshError",
    "RegimeDescriptives",
    "RegressionResult",
    "SarganTest",
    "ThresholdCI",
    "ThresholdDGP",
    "ThresholdFit",
    "ThresholdSpec",
    "TruthRecord",
    "VarStats",
    "VariableRole",
    "WaldTest",
    "additional_threshold_test",
    "benchmark_dgp",
    "candidate_grid",
    "composite_index",
    "correlation_matrix",
    "critical_value",
    "default_spec",
    "dummy_ols_oracle",
    "estimate_multiple",
    "estimate_regime_equation",
    "estimate_single",
    "fit_at",
    "ips_test",
    "linearity_test",
    "make_lag",
    "monte_carlo",
    "ols",
    "period_average",
    "regime_descriptives",
    "regime_indicator",
    "simulate_threshold_panel",
    "ssr_at",
    "threshold_ci",
    "two_sls",
    "within_transform",
]
