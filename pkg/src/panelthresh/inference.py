"""Bootstrap threshold tests and likelihood-ratio confidence sets.

The linearity and regime-count tests use the fixed-regressor bootstrap of
Hansen (1996, 1999): residual vectors are resampled whole, by unit and with
replacement, from the richer (alternative) model's residuals, the dependent
variable is regenerated under the null model's fitted values, and both
models are re-estimated on each replication. Per-replication RNG streams
derive from (seed, replication index), so p-values do not depend on how
replications are scheduled across threads.

Confidence sets for the threshold invert the likelihood-ratio statistic
against the closed-form critical value -2 log(1 - sqrt(1 - alpha)).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, EstimationError
from .panel import PanelDataset
from .regression import ols
from .threshold import (
    BatchScanner,
    GridProjector,
    ThresholdFit,
    ThresholdSpec,
    _argmin,
    _conditional_profile,
    _fit_ws,
    _Workspace,
    candidate_grid,
)

MIN_REPLICATIONS = 99
DEFAULT_REPLICATIONS = 1000
CRITICAL_LEVELS = (0.10, 0.05, 0.01)


@dataclass(frozen=True)
class BootstrapTestResult:
    """Observed F statistic with its bootstrap reference distribution."""

    f_statistic: float
    bootstrap_p: float
    critical_values: dict[float, float]
    replications: int
    seed: int
    null_model: str
    alt_model: str


@dataclass(frozen=True)
class ThresholdCI:
    """Likelihood-ratio inversion confidence set for one threshold.

    ``lower`` and ``upper`` are the interval hull of the non-rejection set;
    ``lr_profile`` exposes the full (gamma, LR) profile so callers can see
    disconnected non-rejection regions.
    """

    level: float
    lower: float
    upper: float
    critical_value: float
    lr_profile: tuple[tuple[float, float], ...]


def critical_value(alpha: float) -> float:
    """Closed-form LR critical value -2 log(1 - sqrt(1 - alpha))."""
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}")
    return -2.0 * math.log(1.0 - math.sqrt(1.0 - alpha))


def _check_bootstrap_args(B: int, seed: int) -> None:
    if B < MIN_REPLICATIONS:
        raise ConfigError(f"need at least {MIN_REPLICATIONS} bootstrap replications, got {B}")
    if seed < 0:
        raise ConfigError(f"seed must be a nonnegative integer, got {seed}")


def _rep_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, rep]))


def _run_reps(B: int, threads: int, worker: Callable[[int], float]) -> np.ndarray:
    out = np.empty(B)
    if threads <= 1:
        for r in range(B):
            out[r] = worker(r)
        return out

    def chunk(lo: int, hi: int) -> None:
        for r in range(lo, hi):
            out[r] = worker(r)

    bounds = np.linspace(0, B, threads + 1).astype(int)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(chunk, bounds[i], bounds[i + 1]) for i in range(threads)]
        for f in futures:
            f.result()
    return out


def _summarize(
    f_obs: float, f_boot: np.ndarray, B: int, seed: int, null_model: str, alt_model: str
) -> BootstrapTestResult:
    p = float(np.count_nonzero(f_boot >= f_obs)) / B
    cvs = {a: float(np.quantile(f_boot, 1.0 - a)) for a in CRITICAL_LEVELS}
    return BootstrapTestResult(
        f_statistic=float(f_obs),
        bootstrap_p=p,
        critical_values=cvs,
        replications=B,
        seed=int(seed),
        null_model=null_model,
        alt_model=alt_model,
    )


def _demean_rows(mat: np.ndarray) -> np.ndarray:
    return mat - mat.mean(axis=1, keepdims=True)


def linearity_test(
    panel: PanelDataset,
    spec: ThresholdSpec,
    B: int = DEFAULT_REPLICATIONS,
    seed: int = 0,
    *,
    threads: int = 1,
) -> BootstrapTestResult:
    """Bootstrap F test of the linear model against one threshold.

    F1 = (S0 - S1(gamma_hat)) / sigma2_hat, with sigma2_hat the
    single-threshold residual variance. The candidate designs are fixed
    across replications, so they are factorized once and each replication
    reduces to projections of the regenerated response.
    """
    _check_bootstrap_args(B, seed)
    ws = _Workspace(panel, spec)
    grid = candidate_grid(ws.q, spec.trim_fraction, spec.max_grid_points)
    linear = ols(ws.y, ws.linear_columns())
    s0 = linear.ssr
    profile = _conditional_profile(ws, grid, ())
    if not profile:
        raise EstimationError("no admissible threshold candidate after trimming")
    gamma_hat, s1 = _argmin(profile)
    dof = ws.n_units * (ws.n_periods - 1)
    f_obs = (s0 - s1) / (s1 / dof)

    projector = GridProjector(ws, grid)
    n, t = ws.n_units, ws.n_periods
    fitted_null = (ws.y - linear.residuals).reshape(n, t)
    resid_alt = _fit_ws(ws, (gamma_hat,)).residuals

    def worker(rep: int) -> float:
        rng = _rep_rng(seed, rep)
        draw = rng.integers(0, n, size=n)
        ystar = _demean_rows(fitted_null + resid_alt[draw]).ravel()
        s0_star = projector.linear_ssr(ystar)
        _, s1_star = projector.min_ssr(ystar)
        return (s0_star - s1_star) / (s1_star / dof) if s1_star > 0 else 0.0

    f_boot = _run_reps(B, threads, worker)
    return _summarize(f_obs, f_boot, B, seed, "linear", "1 threshold")


def additional_threshold_test(
    panel: PanelDataset,
    spec: ThresholdSpec,
    k_null: int,
    B: int = DEFAULT_REPLICATIONS,
    seed: int = 0,
    *,
    threads: int = 1,
) -> BootstrapTestResult:
    """Bootstrap F test of k_null thresholds against k_null + 1.

    The observed statistic compares the sequentially estimated nested fits;
    sigma2_hat comes from the richer model. Each bootstrap replication
    re-runs the same sequential estimator (including the refinement pass)
    on the regenerated response.
    """
    if k_null not in (1, 2):
        raise ConfigError(f"k_null must be 1 or 2, got {k_null}")
    _check_bootstrap_args(B, seed)
    ws = _Workspace(panel, spec)
    grid = candidate_grid(ws.q, spec.trim_fraction, spec.max_grid_points)
    dof = ws.n_units * (ws.n_periods - 1)

    def estimate_seq(k: int, y: np.ndarray | None) -> tuple[tuple[float, ...], float]:
        profile = _conditional_profile(ws, grid, (), y)
        if not profile:
            raise EstimationError("no admissible threshold candidate after trimming")
        g1, s = _argmin(profile)
        gammas: tuple[float, ...] = (g1,)
        if k >= 2:
            scan2 = _conditional_profile(ws, grid, gammas, y)
            if not scan2:
                raise EstimationError("no admissible 2-threshold split")
            g2, s = _argmin(scan2)
            rescan = _conditional_profile(ws, grid, (g2,), y)
            if rescan:
                g1r, s = _argmin(rescan)
                gammas = tuple(sorted((g1r, g2)))
            else:
                gammas = tuple(sorted((g1, g2)))
        if k == 3:
            scan3 = _conditional_profile(ws, grid, gammas, y)
            if not scan3:
                raise EstimationError("no admissible 3-threshold split")
            g3, s = _argmin(scan3)
            gammas = tuple(sorted((*gammas, g3)))
        return gammas, s

    null_gammas, s_null = estimate_seq(k_null, None)
    alt_gammas, s_alt = estimate_seq(k_null + 1, None)
    f_obs = (s_null - s_alt) / (s_alt / dof)

    n, t = ws.n_units, ws.n_periods
    null_fit = _fit_ws(ws, null_gammas)
    fitted_null = ws.y.reshape(n, t) - null_fit.residuals
    resid_alt = _fit_ws(ws, alt_gammas).residuals
    projector = GridProjector(ws, grid)
    scanner = BatchScanner(ws, grid)

    def worker(rep: int) -> float:
        rng = _rep_rng(seed, rep)
        draw = rng.integers(0, n, size=n)
        ystar = _demean_rows(fitted_null + resid_alt[draw]).ravel()
        if k_null == 1:
            g1s, s_null_star = projector.min_ssr(ystar)
            base: tuple[float, ...] = (g1s,)
        else:
            base, s_null_star = _sequential_on(scanner, projector, ystar)
        hit = scanner.scan(base, ystar)
        if hit is None:
            return 0.0
        if k_null == 1:
            g2s, s_alt_star = hit
            rescan = scanner.scan((g2s,), ystar)
            if rescan is not None:
                _, s_alt_star = rescan
        else:
            _, s_alt_star = hit
        if s_alt_star <= 0:
            return 0.0
        return (s_null_star - s_alt_star) / (s_alt_star / dof)

    f_boot = _run_reps(B, threads, worker)
    return _summarize(
        f_obs, f_boot, B, seed, f"{k_null} threshold{'s' if k_null > 1 else ''}",
        f"{k_null + 1} thresholds",
    )


def _sequential_on(
    scanner: BatchScanner, projector: GridProjector, y: np.ndarray
) -> tuple[tuple[float, ...], float]:
    """Two-threshold sequential estimate (with refinement) on a response vector."""
    g1, s = projector.min_ssr(y)
    hit2 = scanner.scan((g1,), y)
    if hit2 is None:
        return (g1,), s
    g2, s = hit2
    rescan = scanner.scan((g2,), y)
    if rescan is not None:
        g1, s = rescan
    return tuple(sorted((g1, g2))), s


def threshold_ci(
    panel: PanelDataset,
    spec: ThresholdSpec,
    fit: ThresholdFit,
    alpha: float,
    threshold_index: int = 0,
) -> ThresholdCI:
    """Invert the LR statistic around one estimated threshold.

    LR(gamma) = (S(gamma) - S(gamma_hat)) / sigma2_hat over the fit's SSR
    profile (conditional on the other thresholds for multi-threshold fits).
    The reported interval is the hull of the non-rejection set. Because the
    SSR is a step function of gamma that only changes at observed threshold
    values, every accepted candidate's non-rejection region extends up to
    the next observed value; the upper endpoint accounts for that, so a
    sharply identified fit still yields an interval of positive width.
    """
    c_alpha = critical_value(alpha)
    if not fit.ssr_profiles:
        raise EstimationError("fit carries no SSR profile; run the grid estimator first")
    if not 0 <= threshold_index < len(fit.ssr_profiles):
        raise EstimationError(
            f"threshold_index {threshold_index} out of range for {len(fit.gammas)} thresholds"
        )
    profile = fit.ssr_profiles[threshold_index]
    gamma_hat = fit.gammas[threshold_index]
    lr_profile = tuple((g, (s - fit.ssr) / fit.sigma2) for g, s in profile)
    accepted = [g for g, v in lr_profile if v <= c_alpha]
    accepted.append(gamma_hat)
    hi = max(accepted)
    q_panel = panel
    if spec.dynamic_lag:
        from .panel import make_lag

        q_panel = make_lag(panel, spec.roles.dependent, 1)
    observed = np.unique(q_panel.values(spec.roles.threshold))
    nxt = np.searchsorted(observed, hi, side="right")
    upper = float(observed[nxt]) if nxt < observed.size else float(hi)
    return ThresholdCI(
        level=1.0 - alpha,
        lower=float(min(accepted)),
        upper=upper,
        critical_value=c_alpha,
        lr_profile=lr_profile,
    )
