"""OLS and two-stage least squares for the regime equation.

Standard errors are homoskedastic by default (a heteroskedasticity-robust
HC0 option sits behind a flag); p-values use the large-sample normal and
chi-square reference distributions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from scipy import stats

from ._linalg import pivoted_lstsq
from .errors import ConfigError, EstimationError
from .panel import PanelDataset, make_lag, regime_indicator
from .threshold import ThresholdFit, ThresholdSpec


class SarganTest(NamedTuple):
    statistic: float
    p_value: float
    df: int


class WaldTest(NamedTuple):
    statistic: float
    p_value: float
    df: int


@dataclass(frozen=True)
class RegressionResult:
    """Labeled coefficients with inference summaries for OLS or 2SLS."""

    coefficients: dict[str, float]
    std_errors: dict[str, float]
    p_values: dict[str, float]
    r_squared: float
    rmse: float
    sargan: SarganTest | None
    wald: WaldTest
    n_obs: int
    estimator: str
    ssr: float
    residuals: np.ndarray = field(repr=False)


def _stack(X: Mapping[str, np.ndarray]) -> tuple[np.ndarray, list[str]]:
    names = list(X)
    if not names:
        raise EstimationError("empty design")
    cols = [np.asarray(X[n], dtype=float).ravel() for n in names]
    lengths = {c.shape[0] for c in cols}
    if len(lengths) != 1:
        raise EstimationError("design columns have unequal lengths")
    return np.column_stack(cols), names


def _is_constant(col: np.ndarray) -> bool:
    return bool(np.ptp(col) == 0.0)


def _wald_all_slopes(beta: np.ndarray, cov: np.ndarray, M: np.ndarray) -> WaldTest:
    slopes = [j for j in range(M.shape[1]) if not _is_constant(M[:, j])]
    if not slopes:
        return WaldTest(0.0, 1.0, 0)
    b = beta[slopes]
    sub = cov[np.ix_(slopes, slopes)]
    stat = float(b @ np.linalg.solve(sub, b))
    return WaldTest(stat, float(stats.chi2.sf(stat, len(slopes))), len(slopes))


def _package(
    y: np.ndarray,
    M: np.ndarray,
    names: list[str],
    beta: np.ndarray,
    residuals: np.ndarray,
    design_for_cov: np.ndarray,
    estimator: str,
    sargan: SarganTest | None,
    robust: bool,
) -> RegressionResult:
    n, k = M.shape
    ssr = float(residuals @ residuals)
    dof = n - k
    if dof <= 0:
        raise EstimationError(f"no residual degrees of freedom (n={n}, k={k})")
    sigma2 = ssr / dof
    gram_inv = np.linalg.inv(design_for_cov.T @ design_for_cov)
    if robust:
        meat = design_for_cov.T @ (design_for_cov * residuals[:, None] ** 2)
        cov = gram_inv @ meat @ gram_inv
    else:
        cov = sigma2 * gram_inv
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, beta / se, np.inf)
    pvals = 2.0 * stats.norm.sf(np.abs(z))
    has_const = any(_is_constant(M[:, j]) for j in range(k))
    tss = float(np.sum((y - y.mean()) ** 2)) if has_const else float(y @ y)
    r2 = 1.0 - ssr / tss if tss > 0 else float("nan")
    return RegressionResult(
        coefficients={nm: float(b) for nm, b in zip(names, beta)},
        std_errors={nm: float(s) for nm, s in zip(names, se)},
        p_values={nm: float(p) for nm, p in zip(names, pvals)},
        r_squared=r2,
        rmse=float(np.sqrt(ssr / dof)),
        sargan=sargan,
        wald=_wald_all_slopes(beta, cov, M),
        n_obs=n,
        estimator=estimator,
        ssr=ssr,
        residuals=residuals,
    )


def ols(y, X: Mapping[str, np.ndarray], *, robust: bool = False) -> RegressionResult:
    """Ordinary least squares on a named column mapping.

    Raises on rank deficiency, naming the offending column. R-squared is
    centered when the design contains a constant column, uncentered
    otherwise; RMSE is sqrt(SSR / (n - k)).
    """
    yv = np.asarray(y, dtype=float).ravel()
    M, names = _stack(X)
    if M.shape[0] != yv.shape[0]:
        raise EstimationError(f"y has {yv.shape[0]} rows, design has {M.shape[0]}")
    res = pivoted_lstsq(M, yv, on_deficient="raise", names=names)
    return _package(yv, M, names, res.beta, res.residuals, M, "OLS", None, robust)


def two_sls(
    y,
    X: Mapping[str, np.ndarray],
    endogenous: Sequence[str],
    Z: Mapping[str, np.ndarray],
    *,
    robust: bool = False,
) -> RegressionResult:
    """Two-stage least squares with Sargan overidentification test.

    Exogenous columns of ``X`` are automatically part of the instrument set.
    Standard errors use residuals from the original (not projected)
    regressors. The Sargan statistic is n times the R-squared of the 2SLS
    residuals regressed on the full instrument set, chi-square with
    (#excluded instruments - #endogenous) degrees of freedom, reported only
    when over-identified.
    """
    yv = np.asarray(y, dtype=float).ravel()
    endog = list(endogenous)
    unknown = [e for e in endog if e not in X]
    if unknown:
        raise EstimationError(f"endogenous names not in design: {', '.join(unknown)}")
    excluded = [z for z in Z if z not in X or z in endog]
    if not endog:
        base = ols(yv, X, robust=robust)
        sargan = _sargan(yv, base.residuals, X, endog, Z) if len(excluded) > 0 else None
        return RegressionResult(
            **{**{f: getattr(base, f) for f in base.__dataclass_fields__},
               "estimator": "2SLS", "sargan": sargan},
        )
    if len(excluded) < len(endog):
        raise EstimationError(
            f"under-identified: {len(excluded)} excluded instruments for "
            f"{len(endog)} endogenous regressors"
        )
    M, names = _stack(X)
    if M.shape[0] != yv.shape[0]:
        raise EstimationError(f"y has {yv.shape[0]} rows, design has {M.shape[0]}")
    Zfull, znames = _instrument_matrix(X, endog, Z)
    M_hat = M.copy()
    for e in endog:
        j = names.index(e)
        first = pivoted_lstsq(Zfull, M[:, j], on_deficient="raise", names=znames)
        M_hat[:, j] = Zfull @ first.beta
    second = pivoted_lstsq(M_hat, yv, on_deficient="raise", names=names)
    residuals = yv - M @ second.beta
    sargan = None
    if len(excluded) > len(endog):
        sargan = _sargan(yv, residuals, X, endog, Z)
    return _package(yv, M, names, second.beta, residuals, M_hat, "2SLS", sargan, robust)


def _instrument_matrix(
    X: Mapping[str, np.ndarray], endog: Sequence[str], Z: Mapping[str, np.ndarray]
) -> tuple[np.ndarray, list[str]]:
    cols: dict[str, np.ndarray] = {
        n: np.asarray(v, dtype=float).ravel() for n, v in X.items() if n not in endog
    }
    for n, v in Z.items():
        if n not in cols:
            cols[n] = np.asarray(v, dtype=float).ravel()
    return np.column_stack(list(cols.values())), list(cols)


def _sargan(y, residuals, X, endog, Z) -> SarganTest:
    Zfull, znames = _instrument_matrix(X, endog, Z)
    aux = pivoted_lstsq(Zfull, residuals, on_deficient="drop")
    rss0 = float(residuals @ residuals)
    stat = len(residuals) * (1.0 - aux.ssr / rss0) if rss0 > 0 else 0.0
    excluded = [z for z in Z if z not in X or z in endog]
    df = len(excluded) - len(endog)
    return SarganTest(float(stat), float(stats.chi2.sf(stat, df)), df)


def estimate_regime_equation(
    panel: PanelDataset,
    spec: ThresholdSpec,
    fit: ThresholdFit,
    estimator: str = "OLS",
    instruments: Sequence[str] | None = None,
    *,
    robust: bool = False,
) -> RegressionResult:
    """Estimate the regime equation at the fitted thresholds.

    Assembles the pooled design (constant, optional dependent-variable lag,
    regime-interacted slopes, optional intercept shifts, invariant controls)
    and runs OLS or 2SLS. Under 2SLS the regime-interacted slope columns are
    treated as endogenous and each supplied instrument is interacted with
    the regime indicators so every endogenous column has regime-specific
    instruments.
    """
    estimator = estimator.upper()
    if estimator not in ("OLS", "2SLS"):
        raise ConfigError(f"estimator must be OLS or 2SLS, got {estimator!r}")
    roles = spec.roles
    roles.validate(panel)
    est_panel = panel
    lag_label = None
    if spec.dynamic_lag:
        est_panel = make_lag(panel, roles.dependent, 1)
        lag_label = f"{roles.dependent} (-1)"
    gammas = fit.gammas
    indicators = _regime_indicators(est_panel, roles.threshold, gammas)
    n = est_panel.n_units * est_panel.n_periods
    X: dict[str, np.ndarray] = {"C": np.ones(n)}
    if lag_label is not None:
        X[lag_label] = est_panel.values(f"{roles.dependent}_lag1").ravel()
    slope_labels: list[str] = []
    for r, ind in enumerate(indicators, start=1):
        for v in roles.regime_varying:
            label = f"{v} (beta{r})"
            X[label] = est_panel.values(v).ravel() * ind
            slope_labels.append(label)
    if spec.include_intercept_shift:
        for k, g in enumerate(gammas, start=1):
            X[f"shift{k}"] = regime_indicator(est_panel, roles.threshold, g).ravel()
    for v in roles.invariant_controls:
        X[v] = est_panel.values(v).ravel()
    y = est_panel.values(roles.dependent).ravel()
    if estimator == "OLS":
        return ols(y, X, robust=robust)
    instruments = tuple(instruments or roles.instruments)
    if not instruments:
        raise ConfigError("2SLS requires at least one instrument")
    Z: dict[str, np.ndarray] = {}
    for z in instruments:
        zvals = est_panel.values(z).ravel()
        for r, ind in enumerate(indicators, start=1):
            Z[f"{z} (regime{r})"] = zvals * ind
    return two_sls(y, X, slope_labels, Z, robust=robust)


def _regime_indicators(
    panel: PanelDataset, threshold_var: str, gammas: Sequence[float]
) -> list[np.ndarray]:
    q = panel.values(threshold_var).ravel()
    regime = np.sum(q[:, None] > np.asarray(gammas)[None, :], axis=1)
    return [(regime == r).astype(float) for r in range(len(gammas) + 1)]
