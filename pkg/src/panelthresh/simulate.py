"""Synthetic panels with planted thresholds and the Monte Carlo harnesses.

Every generator is driven by numpy's PCG64 through ``SeedSequence``, with
per-trial streams derived from (master seed, trial index); summaries record
the generator name so results are reproducible across machines and
scheduling orders.

``dummy_ols_oracle`` is an independent normal-equations solver (explicit
Gaussian elimination) kept free of the main least-squares path; it exists
so tests can cross-check coefficients and SSR against a second route.
"""

from __future__ import annotations

import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import ConfigError, EstimationError
from .inference import linearity_test, threshold_ci
from .panel import PanelDataset, VariableRole
from .threshold import ThresholdSpec, estimate_single

RNG_DESCRIPTOR = {
    "generator": "numpy PCG64 via SeedSequence([seed, index])",
    "numpy": np.__version__,
}

MIN_TRIALS = 50


@dataclass(frozen=True)
class ThresholdDGP:
    """Data-generating process for a balanced panel with regime-switching slopes.

    The first regime-varying regressor is the threshold variable itself when
    ``threshold_in_regressors`` is set (the default), matching the common
    empirical shape where the switching variable also carries the switching
    slope. With ``endogeneity_rho`` nonzero the threshold variable's
    innovation is correlated with the error and two valid, relevant
    instruments ``z1``/``z2`` are emitted alongside.
    """

    n_units: int
    n_periods: int
    gamma0: float | tuple[float, ...]
    beta_low: tuple[float, ...]
    beta_high: tuple[float, ...]
    delta0: float = 0.0
    theta0: float | None = None
    fixed_effect_sd: float = 1.0
    noise_sd: float = 1.0
    threshold_dist: str = "uniform(0,1)"
    endogeneity_rho: float = 0.0
    seed: int = 0
    beta_regimes: tuple[tuple[float, ...], ...] | None = None
    control_betas: tuple[float, ...] = ()
    threshold_in_regressors: bool = True

    def __post_init__(self):
        if self.n_units < 2 or self.n_periods < 3:
            raise ConfigError(
                f"need n_units >= 2 and n_periods >= 3, got {self.n_units}, {self.n_periods}"
            )
        if self.noise_sd < 0 or self.fixed_effect_sd < 0:
            raise ConfigError("standard deviations must be nonnegative")
        if not -1.0 <= self.endogeneity_rho <= 1.0:
            raise ConfigError(f"endogeneity_rho must be in [-1, 1], got {self.endogeneity_rho}")
        if self.theta0 is not None and not -1.0 < self.theta0 < 1.0:
            raise ConfigError(f"theta0 must be in (-1, 1), got {self.theta0}")
        if len(self.beta_low) != len(self.beta_high) or not self.beta_low:
            raise ConfigError("beta_low and beta_high must be equal-length, nonempty vectors")
        _parse_dist(self.threshold_dist)
        if self.beta_regimes is not None:
            if len(self.beta_regimes) != len(self.gammas0) + 1:
                raise ConfigError(
                    f"beta_regimes needs {len(self.gammas0) + 1} vectors, got {len(self.beta_regimes)}"
                )
            if any(len(b) != len(self.beta_low) for b in self.beta_regimes):
                raise ConfigError("beta_regimes vectors must match beta_low length")
        elif len(self.gammas0) != 1:
            raise ConfigError("multi-threshold generation requires explicit beta_regimes")

    @property
    def gammas0(self) -> tuple[float, ...]:
        g = self.gamma0
        return tuple(float(v) for v in g) if isinstance(g, (tuple, list)) else (float(g),)

    @property
    def regime_betas(self) -> tuple[tuple[float, ...], ...]:
        if self.beta_regimes is not None:
            return self.beta_regimes
        return (tuple(self.beta_low), tuple(self.beta_high))


@dataclass(frozen=True)
class TruthRecord:
    """Planted parameters emitted alongside a simulated panel."""

    gammas: tuple[float, ...]
    betas_by_regime: tuple[tuple[float, ...], ...]
    delta: float
    theta: float | None
    roles: VariableRole
    rng: dict[str, str] = field(default_factory=lambda: dict(RNG_DESCRIPTOR))


def _parse_dist(descriptor: str) -> tuple[str, float, float]:
    m = re.fullmatch(
        r"\s*(uniform|lognormal)\s*\(\s*([-+0-9.eE]+)\s*,\s*([-+0-9.eE]+)\s*\)\s*",
        descriptor,
    )
    if not m:
        raise ConfigError(
            f"threshold_dist must look like 'uniform(a,b)' or 'lognormal(mu,sigma)', got {descriptor!r}"
        )
    kind, a, b = m.group(1), float(m.group(2)), float(m.group(3))
    if kind == "uniform" and b <= a:
        raise ConfigError(f"uniform bounds must satisfy a < b, got {descriptor!r}")
    if kind == "lognormal" and b <= 0:
        raise ConfigError(f"lognormal sigma must be positive, got {descriptor!r}")
    return kind, a, b


def _from_gaussian(kind: str, a: float, b: float, g: np.ndarray) -> np.ndarray:
    from scipy.stats import norm

    if kind == "uniform":
        return a + (b - a) * norm.cdf(g)
    return np.exp(a + b * g)


def simulate_threshold_panel(dgp: ThresholdDGP) -> tuple[PanelDataset, TruthRecord]:
    """Draw one balanced panel from the DGP plus its truth record.

    Identical seeds produce identical panels bit for bit. With a dynamic
    coefficient the recursion is warmed up over 50 burn-in periods that are
    discarded.
    """
    rng = np.random.default_rng(np.random.SeedSequence([dgp.seed]))
    n, t_keep = dgp.n_units, dgp.n_periods
    burn = 50 if dgp.theta0 is not None else 0
    t_gen = t_keep + burn
    k1 = len(dgp.beta_low)
    kind, a, b = _parse_dist(dgp.threshold_dist)

    fe = rng.normal(0.0, dgp.fixed_effect_sd, size=n)
    eta = rng.standard_normal((n, t_gen))
    eps = dgp.noise_sd * eta

    instruments: dict[str, np.ndarray] = {}
    if dgp.endogeneity_rho != 0.0:
        rho = dgp.endogeneity_rho
        v = rng.standard_normal((n, t_gen))
        z1 = rng.standard_normal((n, t_gen))
        z2 = rng.standard_normal((n, t_gen))
        u_q = rho * eta + math.sqrt(1.0 - rho * rho) * v
        q = _from_gaussian(kind, a, b, (z1 + z2 + u_q) / math.sqrt(3.0))
        instruments = {"z1": z1, "z2": z2}
    else:
        if kind == "uniform":
            q = rng.uniform(a, b, size=(n, t_gen))
        else:
            q = rng.lognormal(a, b, size=(n, t_gen))

    regressors: dict[str, np.ndarray] = {}
    x = np.empty((n, t_gen, k1))
    if dgp.threshold_in_regressors:
        x[:, :, 0] = q
        rv_names = ["q"] + [f"x{j}" for j in range(2, k1 + 1)]
        for j in range(1, k1):
            x[:, :, j] = rng.standard_normal((n, t_gen))
            regressors[rv_names[j]] = x[:, :, j]
    else:
        rv_names = [f"x{j}" for j in range(1, k1 + 1)]
        for j in range(k1):
            x[:, :, j] = rng.standard_normal((n, t_gen))
            regressors[rv_names[j]] = x[:, :, j]

    controls: dict[str, np.ndarray] = {}
    kc = len(dgp.control_betas)
    c = np.empty((n, t_gen, kc))
    for j in range(kc):
        c[:, :, j] = rng.standard_normal((n, t_gen))
        controls[f"c{j + 1}"] = c[:, :, j]

    gammas = dgp.gammas0
    regime = np.sum(q[:, :, None] > np.asarray(gammas)[None, None, :], axis=2)
    betas = np.asarray(dgp.regime_betas)
    slope = np.einsum("ntk,ntk->nt", x, betas[regime])
    shift = dgp.delta0 * np.sum(q[:, :, None] <= np.asarray(gammas)[None, None, :], axis=2)
    ctrl = np.einsum("ntk,k->nt", c, np.asarray(dgp.control_betas)) if kc else 0.0
    structural = slope + shift + ctrl

    if dgp.theta0 is None:
        y = fe[:, None] + structural + eps
    else:
        y = np.empty((n, t_gen))
        prev = fe / (1.0 - dgp.theta0)
        for s in range(t_gen):
            prev = fe + dgp.theta0 * prev + structural[:, s] + eps[:, s]
            y[:, s] = prev

    keep = slice(burn, t_gen)
    variables = {"y": y[:, keep], "q": q[:, keep]}
    variables.update({k: v[:, keep] for k, v in regressors.items()})
    variables.update({k: v[:, keep] for k, v in controls.items()})
    variables.update({k: v[:, keep] for k, v in instruments.items()})
    panel = PanelDataset(
        unit_ids=[f"u{i + 1}" for i in range(n)],
        periods=[str(s + 1) for s in range(t_keep)],
        variables=variables,
        metadata={"seed": str(dgp.seed), **RNG_DESCRIPTOR},
    )
    roles = VariableRole(
        dependent="y",
        threshold="q",
        regime_varying=tuple(rv_names),
        invariant_controls=tuple(controls),
        instruments=tuple(instruments),
    )
    truth = TruthRecord(
        gammas=gammas,
        betas_by_regime=tuple(tuple(v) for v in dgp.regime_betas),
        delta=dgp.delta0,
        theta=dgp.theta0,
        roles=roles,
    )
    return panel, truth


def benchmark_dgp(
    contrast: float = 0.3,
    noise_sd: float = 1.0,
    seed: int = 42,
    gamma0: float = 12.741,
    base_slope: float = 0.2,
) -> ThresholdDGP:
    """Small-panel benchmark: 8 units x 36 periods, lognormal threshold variable.

    The threshold variable doubles as the switching regressor; its lognormal
    parameters put roughly 55-60% of the observations below ``gamma0`` with
    regime means around 8 and 25. ``contrast`` is the high-minus-low slope
    difference.
    """
    return ThresholdDGP(
        n_units=8,
        n_periods=36,
        gamma0=gamma0,
        beta_low=(base_slope,),
        beta_high=(base_slope + contrast,),
        delta0=0.0,
        fixed_effect_sd=1.0,
        noise_sd=noise_sd,
        threshold_dist="lognormal(2.45,0.75)",
        seed=seed,
    )


def default_spec(truth: TruthRecord, **overrides) -> ThresholdSpec:
    """A ThresholdSpec matching a simulated panel's roles."""
    kwargs = {
        "roles": truth.roles,
        "include_intercept_shift": True,
        "dynamic_lag": truth.theta is not None,
        "num_thresholds": len(truth.gammas),
    }
    kwargs.update(overrides)
    return ThresholdSpec(**kwargs)


def dummy_ols_oracle(y, X) -> tuple[np.ndarray, float]:
    """Normal-equations OLS by explicit Gaussian elimination, for tests only.

    Solves (X'X) b = X'y with partial pivoting written out longhand, so its
    arithmetic shares nothing with the QR path used by the estimators.
    Limited to small instances (at most 50 columns).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[1] > 50:
        raise EstimationError("oracle accepts 2-D designs with at most 50 columns")
    k = X.shape[1]
    aug = np.empty((k, k + 1))
    for i in range(k):
        for j in range(k):
            aug[i, j] = float(X[:, i] @ X[:, j])
        aug[i, k] = float(X[:, i] @ y)
    scale = np.abs(aug[:, :k]).max()
    if scale == 0.0:
        raise EstimationError("singular normal equations")
    for col in range(k):
        pivot_row = col + int(np.argmax(np.abs(aug[col:, col])))
        if abs(aug[pivot_row, col]) < 1e-12 * scale:
            raise EstimationError("singular normal equations")
        if pivot_row != col:
            aug[[col, pivot_row]] = aug[[pivot_row, col]]
        for row in range(col + 1, k):
            factor = aug[row, col] / aug[col, col]
            aug[row, col:] -= factor * aug[col, col:]
    beta = np.zeros(k)
    for col in range(k - 1, -1, -1):
        beta[col] = (aug[col, k] - aug[col, col + 1:k] @ beta[col + 1:]) / aug[col, col]
    resid = y - X @ beta
    return beta, float(resid @ resid)


@dataclass(frozen=True)
class MonteCarloSummary:
    """Outcome of one simulation study, deterministic per master seed."""

    experiment: str
    trials: int
    metrics: dict[str, float]
    master_seed: int
    rng: dict[str, str] = field(default_factory=lambda: dict(RNG_DESCRIPTOR))


def _trial_seeds(master_seed: int, trial: int) -> tuple[int, int]:
    state = np.random.SeedSequence([master_seed, trial]).generate_state(2, np.uint64)
    return int(state[0]), int(state[1])


def _run_trials(trials: int, threads: int, worker: Callable[[int], tuple]) -> list:
    out: list = [None] * trials
    if threads <= 1:
        for i in range(trials):
            out[i] = worker(i)
        return out

    def chunk(lo: int, hi: int) -> None:
        for i in range(lo, hi):
            out[i] = worker(i)

    bounds = np.linspace(0, trials, threads + 1).astype(int)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(chunk, bounds[i], bounds[i + 1]) for i in range(threads)]
        for f in futures:
            f.result()
    return out


def monte_carlo(
    experiment: str,
    trials: int,
    dgp: ThresholdDGP,
    *,
    master_seed: int = 0,
    spec_overrides: dict | None = None,
    alpha: float = 0.05,
    replications: int = 199,
    threads: int = 1,
) -> MonteCarloSummary:
    """Run a named simulation study and summarize it.

    ``recovery``: fraction of trials whose estimated threshold lands within
    one grid step of the planted one, plus bias and RMSE of the estimate.
    ``size`` / ``power``: rejection rate of the bootstrap linearity test at
    ``alpha`` (the DGP decides which one it is). ``coverage``: rate at which
    the LR confidence set at ``alpha`` covers the planted threshold.
    Metrics carry Monte Carlo standard errors.
    """
    if experiment not in ("recovery", "size", "power", "coverage"):
        raise ConfigError(f"unknown experiment {experiment!r}")
    if trials < MIN_TRIALS:
        raise ConfigError(f"need at least {MIN_TRIALS} trials, got {trials}")
    overrides = dict(spec_overrides or {})

    def single_fit(trial: int):
        panel_seed, test_seed = _trial_seeds(master_seed, trial)
        panel, truth = simulate_threshold_panel(replace(dgp, seed=panel_seed))
        spec = default_spec(truth, num_thresholds=1, **overrides)
        fit = estimate_single(panel, spec)
        return panel, truth, spec, fit, test_seed

    if experiment == "recovery":
        def worker(trial: int):
            _, truth, _, fit, _ = single_fit(trial)
            grid = np.array([g for g, _ in fit.ssr_profile])
            below = np.nonzero(grid <= truth.gammas[0])[0]
            idx0 = int(below[-1]) if below.size else 0
            idx_hat = int(np.searchsorted(grid, fit.gammas[0]))
            return abs(idx_hat - idx0) <= 1, fit.gammas[0] - truth.gammas[0]

        results = _run_trials(trials, threads, worker)
        hits = np.array([r[0] for r in results], dtype=float)
        errs = np.array([r[1] for r in results])
        metrics = {
            "hit_rate": float(hits.mean()),
            "hit_rate_mc_se": _rate_se(hits),
            "bias": float(errs.mean()),
            "rmse": float(np.sqrt(np.mean(errs**2))),
        }
    elif experiment in ("size", "power"):
        def worker(trial: int):
            panel_seed, test_seed = _trial_seeds(master_seed, trial)
            panel, truth = simulate_threshold_panel(replace(dgp, seed=panel_seed))
            spec = default_spec(truth, num_thresholds=1, **overrides)
            res = linearity_test(panel, spec, B=replications, seed=test_seed)
            return (res.bootstrap_p <= alpha,)

        results = _run_trials(trials, threads, worker)
        rejects = np.array([r[0] for r in results], dtype=float)
        metrics = {
            "rejection_rate": float(rejects.mean()),
            "rejection_rate_mc_se": _rate_se(rejects),
            "alpha": alpha,
            "replications": float(replications),
        }
    else:
        def worker(trial: int):
            panel, truth, spec, fit, _ = single_fit(trial)
            ci = threshold_ci(panel, spec, fit, alpha)
            return (ci.lower <= truth.gammas[0] <= ci.upper,)

        results = _run_trials(trials, threads, worker)
        covered = np.array([r[0] for r in results], dtype=float)
        metrics = {
            "coverage_rate": float(covered.mean()),
            "coverage_rate_mc_se": _rate_se(covered),
            "alpha": alpha,
        }
    return MonteCarloSummary(
        experiment=experiment,
        trials=trials,
        metrics=metrics,
        master_seed=int(master_seed),
    )


def _rate_se(indicator: np.ndarray) -> float:
    p = float(indicator.mean())
    return math.sqrt(p * (1.0 - p) / indicator.size)
