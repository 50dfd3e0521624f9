"""Threshold estimation by sequential least squares over a trimmed grid.

The estimator follows Hansen (1999): the fixed effects are removed by the
within transform, the slope vector is profiled over candidate thresholds
drawn from the observed values of the threshold variable, and the estimate
is the SSR minimizer. Additional thresholds are estimated sequentially,
conditional on the ones already found, with one refinement pass for the
first threshold.

Because the SSR is piecewise constant between adjacent observed values of
the threshold variable, restricting candidates to observed values loses
nothing.

References
----------
Hansen, B. E. (1999). Threshold effects in non-dynamic panels: estimation,
    testing, and inference. Journal of Econometrics, 93(2), 345-368.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._linalg import pivoted_lstsq, qr_projector
from .errors import ConfigError, EstimationError
from .panel import PanelDataset, VariableRole, make_lag

DEFAULT_TRIM = 0.05
DEFAULT_MAX_GRID = 400


@dataclass(frozen=True)
class ThresholdSpec:
    """Declarative description of one threshold-regression problem.

    ``include_intercept_shift`` adds a regime intercept-shift term (one
    common coefficient per threshold, not unit-specific). ``dynamic_lag``
    adds the one-period lag of the dependent variable as a regressor; the
    lag is built before demeaning, so the within estimate carries the usual
    small-T dynamic-panel bias and IV estimation of the regime equation is
    the bias-aware route.
    """

    roles: VariableRole
    include_intercept_shift: bool = True
    dynamic_lag: bool = False
    trim_fraction: float = DEFAULT_TRIM
    max_grid_points: int = DEFAULT_MAX_GRID
    num_thresholds: int = 1

    def __post_init__(self):
        if not 0.0 < self.trim_fraction < 0.45:
            raise ConfigError(f"trim_fraction must be in (0, 0.45), got {self.trim_fraction}")
        if self.max_grid_points < 2:
            raise ConfigError(f"max_grid_points must be >= 2, got {self.max_grid_points}")
        if self.num_thresholds not in (1, 2, 3):
            raise ConfigError(f"num_thresholds must be 1, 2 or 3, got {self.num_thresholds}")


@dataclass(frozen=True)
class ThresholdFit:
    """Estimated thresholds with regime-wise coefficients and SSR profile.

    ``betas_by_regime[r]`` holds the slopes on ``regime_varying`` (in that
    order) for regime ``r``, regimes numbered from the lowest threshold
    segment upward. ``delta`` holds the intercept-shift coefficients on the
    cumulative indicators I(q <= gamma_k), ``None`` when disabled.
    ``ssr_profiles[j]`` is the (candidate, SSR) profile for threshold ``j``
    conditional on the other thresholds at their estimates.
    """

    gammas: tuple[float, ...]
    regime_varying: tuple[str, ...]
    betas_by_regime: tuple[np.ndarray, ...]
    delta: tuple[float, ...] | None
    control_betas: dict[str, float]
    ssr: float
    sigma2: float
    residuals: np.ndarray
    regime_counts: tuple[int, ...]
    n_units: int
    n_periods_used: int
    ssr_profiles: tuple[tuple[tuple[float, float], ...], ...] = field(default=())

    @property
    def ssr_profile(self) -> tuple[tuple[float, float], ...]:
        """Profile for the first threshold (the only one in single-threshold fits)."""
        return self.ssr_profiles[0] if self.ssr_profiles else ()

    @property
    def n_obs(self) -> int:
        return self.n_units * self.n_periods_used


def observation_floor(trim_fraction: float, n_obs: int) -> int:
    """Minimum observations any regime must keep.

    max(5, ceil(trim_fraction * n_obs)); on toy panels with fewer than 10
    observations the absolute part degrades to n_obs // 2 so a split is
    still expressible.
    """
    return max(min(5, n_obs // 2), math.ceil(trim_fraction * n_obs))


def candidate_grid(
    q_values, trim_fraction: float, max_grid_points: int
) -> np.ndarray:
    """Distinct observed threshold values between the trim quantiles.

    If more than ``max_grid_points`` survive, the survivors are thinned to
    evenly spaced quantiles of themselves; every candidate is always an
    observed value.
    """
    if not 0.0 < trim_fraction < 0.45:
        raise ConfigError(f"trim_fraction must be in (0, 0.45), got {trim_fraction}")
    if max_grid_points < 2:
        raise ConfigError(f"max_grid_points must be >= 2, got {max_grid_points}")
    q = np.asarray(q_values, dtype=float).ravel()
    distinct = np.unique(q)
    if distinct.size < 2:
        raise EstimationError("degenerate threshold variable (all values equal)")
    lo, hi = np.quantile(q, [trim_fraction, 1.0 - trim_fraction])
    survivors = distinct[(distinct >= lo) & (distinct <= hi)]
    if survivors.size < 2:
        raise EstimationError("empty grid after trimming")
    if survivors.size > max_grid_points:
        idx = np.round(np.linspace(0, survivors.size - 1, max_grid_points)).astype(int)
        survivors = survivors[idx]
    return survivors


def _demean_rows(mat: np.ndarray) -> np.ndarray:
    return mat - mat.mean(axis=1, keepdims=True)


class _Workspace:
    """Estimation-ready arrays for one (panel, spec) pair.

    Applies the dynamic-lag truncation, flattens matrices unit-major, and
    caches the demeaned cumulative columns I(q <= c) * x per candidate so
    regime columns can be assembled as differences of cumulative columns.
    """

    def __init__(self, panel: PanelDataset, spec: ThresholdSpec):
        roles = spec.roles
        roles.validate(panel)
        est_panel = panel
        controls = list(roles.invariant_controls)
        if spec.dynamic_lag:
            est_panel = make_lag(panel, roles.dependent, 1)
            controls.append(f"{roles.dependent}_lag1")
        self.panel = est_panel
        self.spec = spec
        self.n_units = est_panel.n_units
        self.n_periods = est_panel.n_periods
        self.n_obs = self.n_units * self.n_periods
        self.floor = observation_floor(spec.trim_fraction, self.n_obs)
        self.y = _demean_rows(est_panel.values(roles.dependent)).ravel()
        self.q = est_panel.values(roles.threshold).ravel()
        self.rv_names = roles.regime_varying
        self.rv_raw = np.column_stack([est_panel.values(v).ravel() for v in self.rv_names])
        self.rv_full_dem = self._demean_cols(self.rv_raw)
        self.control_names = tuple(controls)
        if controls:
            self.controls_dem = self._demean_cols(
                np.column_stack([est_panel.values(v).ravel() for v in controls])
            )
        else:
            self.controls_dem = np.empty((self.n_obs, 0))
        self._cum_cache: dict[float, tuple[np.ndarray, np.ndarray]] = {}

    def _demean_cols(self, cols: np.ndarray) -> np.ndarray:
        shaped = cols.reshape(self.n_units, self.n_periods, -1)
        return (shaped - shaped.mean(axis=1, keepdims=True)).reshape(self.n_obs, -1)

    def cum(self, gamma: float) -> tuple[np.ndarray, np.ndarray]:
        """Demeaned x * I(q <= gamma) columns and the demeaned indicator."""
        hit = self._cum_cache.get(gamma)
        if hit is not None:
            return hit
        mask = (self.q <= gamma).astype(float)
        rv_cum = self._demean_cols(self.rv_raw * mask[:, None])
        ind_cum = self._demean_cols(mask[:, None])[:, 0]
        self._cum_cache[gamma] = (rv_cum, ind_cum)
        return rv_cum, ind_cum

    def regime_counts(self, gammas: Sequence[float]) -> np.ndarray:
        regime = np.sum(self.q[:, None] > np.asarray(gammas)[None, :], axis=1)
        return np.bincount(regime, minlength=len(gammas) + 1)

    def design(self, gammas: Sequence[float]) -> tuple[np.ndarray, list[str]]:
        """Regressor matrix at the given strictly-sorted thresholds.

        Regime columns are differences of cumulative columns, so scans that
        reuse cached cumulative columns produce bit-identical designs to a
        one-off fit at the same thresholds.
        """
        gs = list(gammas)
        if any(b <= a for a, b in zip(gs, gs[1:])):
            raise EstimationError(f"thresholds must be strictly increasing, got {gs}")
        k1 = len(self.rv_names)
        cums = [self.cum(g) for g in gs]
        blocks: list[np.ndarray] = []
        names: list[str] = []
        prev = np.zeros((self.n_obs, k1))
        for r, (rv_cum, _) in enumerate(cums, start=1):
            blocks.append(rv_cum - prev)
            names.extend(f"{v}:regime{r}" for v in self.rv_names)
            prev = rv_cum
        blocks.append(self.rv_full_dem - prev)
        names.extend(f"{v}:regime{len(gs) + 1}" for v in self.rv_names)
        if self.spec.include_intercept_shift:
            for k, (_, ind_cum) in enumerate(cums, start=1):
                blocks.append(ind_cum[:, None])
                names.append(f"shift{k}")
        if self.controls_dem.shape[1]:
            blocks.append(self.controls_dem)
            names.extend(self.control_names)
        return np.hstack(blocks), names

    def linear_columns(self) -> dict[str, np.ndarray]:
        """Demeaned no-threshold design (regime slopes pooled), for the linear fit."""
        cols = {v: self.rv_full_dem[:, j] for j, v in enumerate(self.rv_names)}
        for j, v in enumerate(self.control_names):
            cols[v] = self.controls_dem[:, j]
        return cols


def _fit_ws(ws: _Workspace, gammas: Sequence[float]) -> ThresholdFit:
    spec = ws.spec
    counts = ws.regime_counts(gammas)
    low = np.nonzero(counts < ws.floor)[0]
    if low.size:
        r = int(low[0])
        raise EstimationError(
            f"regime {r + 1} has {int(counts[r])} observations, "
            f"below the floor of {ws.floor}"
        )
    X, names = ws.design(gammas)
    res = pivoted_lstsq(X, ws.y, on_deficient="raise", names=names)
    k1 = len(ws.rv_names)
    n_regimes = len(gammas) + 1
    betas = tuple(res.beta[r * k1:(r + 1) * k1].copy() for r in range(n_regimes))
    offset = n_regimes * k1
    delta: tuple[float, ...] | None = None
    if spec.include_intercept_shift:
        delta = tuple(float(b) for b in res.beta[offset:offset + len(gammas)])
        offset += len(gammas)
    control_betas = {name: float(b) for name, b in zip(ws.control_names, res.beta[offset:])}
    sigma2 = res.ssr / (ws.n_units * (ws.n_periods - 1))
    return ThresholdFit(
        gammas=tuple(float(g) for g in gammas),
        regime_varying=ws.rv_names,
        betas_by_regime=betas,
        delta=delta,
        control_betas=control_betas,
        ssr=res.ssr,
        sigma2=sigma2,
        residuals=res.residuals.reshape(ws.n_units, ws.n_periods),
        regime_counts=tuple(int(c) for c in counts),
        n_units=ws.n_units,
        n_periods_used=ws.n_periods,
    )


def _ssr_ws(ws: _Workspace, gammas: Sequence[float], y: np.ndarray | None = None) -> float:
    """SSR at arbitrary thresholds; collapsed or collinear columns are dropped."""
    X, _ = ws.design(gammas)
    return pivoted_lstsq(X, ws.y if y is None else y, on_deficient="drop").ssr


def _conditional_profile(
    ws: _Workspace,
    grid: np.ndarray,
    fixed: tuple[float, ...],
    y: np.ndarray | None = None,
) -> list[tuple[float, float]]:
    """(candidate, SSR) over grid candidates admissible jointly with ``fixed``."""
    profile: list[tuple[float, float]] = []
    for c in grid:
        c = float(c)
        if c in fixed:
            continue
        gammas = tuple(sorted((*fixed, c)))
        if np.min(ws.regime_counts(gammas)) < ws.floor:
            continue
        profile.append((c, _ssr_ws(ws, gammas, y)))
    return profile


def _argmin(profile: list[tuple[float, float]]) -> tuple[float, float]:
    best = profile[0]
    for entry in profile[1:]:
        if entry[1] < best[1]:
            best = entry
    return best


def fit_at(panel: PanelDataset, spec: ThresholdSpec, gammas: Sequence[float]) -> ThresholdFit:
    """Fit the regime regression at pinned threshold values.

    Builds the within-transformed design (regime-interacted slopes, optional
    intercept shifts, invariant controls, optional dependent-variable lag),
    solves it by rank-revealing least squares, and packages the full fit.
    The returned fit has an empty SSR profile.
    """
    if not 1 <= len(gammas) <= 3:
        raise EstimationError(f"expected 1 to 3 thresholds, got {len(gammas)}")
    return _fit_ws(_Workspace(panel, spec), gammas)


def ssr_at(panel: PanelDataset, spec: ThresholdSpec, gammas: Sequence[float]) -> float:
    """SSR of the threshold design at arbitrary gammas (no regime floor).

    Regimes emptied by extreme thresholds contribute all-zero columns that
    are dropped, so the fit degrades gracefully to the nested model instead
    of erroring; useful for profile diagnostics at the grid edges.
    """
    return _ssr_ws(_Workspace(panel, spec), sorted(float(g) for g in gammas))


def estimate_single(panel: PanelDataset, spec: ThresholdSpec) -> ThresholdFit:
    """Grid-search the single SSR-minimizing threshold.

    Evaluates the pinned fit over the trimmed candidate grid and returns the
    fit at the minimizer with the full profile attached. Ties break toward
    the smallest candidate.
    """
    if spec.num_thresholds != 1:
        raise ConfigError(f"estimate_single requires num_thresholds=1, got {spec.num_thresholds}")
    ws = _Workspace(panel, spec)
    grid = candidate_grid(ws.q, spec.trim_fraction, spec.max_grid_points)
    profile = _conditional_profile(ws, grid, ())
    if not profile:
        raise EstimationError("no admissible threshold candidate after trimming")
    gamma_hat, _ = _argmin(profile)
    fit = _fit_ws(ws, (gamma_hat,))
    return _with_profiles(fit, (tuple(profile),))


def estimate_multiple(panel: PanelDataset, spec: ThresholdSpec) -> ThresholdFit:
    """Sequential estimation of two or three thresholds.

    The first threshold is the single-threshold minimizer; each further
    threshold minimizes the SSR conditional on the ones already found. After
    the second threshold is located, the first is re-estimated once holding
    the second fixed. Conditional profiles at the final estimates are
    attached per threshold (sorted order) for confidence-set construction.
    """
    if spec.num_thresholds not in (2, 3):
        raise ConfigError(
            f"estimate_multiple requires num_thresholds in {{2, 3}}, got {spec.num_thresholds}"
        )
    ws = _Workspace(panel, spec)
    grid = candidate_grid(ws.q, spec.trim_fraction, spec.max_grid_points)
    first = _conditional_profile(ws, grid, ())
    if not first:
        raise EstimationError("no admissible threshold candidate after trimming")
    g1, _ = _argmin(first)
    gammas = _sequential_step(ws, grid, (g1,), refine=True)
    if spec.num_thresholds == 3:
        gammas = _sequential_step(ws, grid, gammas, refine=False)
    fit = _fit_ws(ws, gammas)
    profiles = []
    for j in range(len(gammas)):
        others = tuple(g for i, g in enumerate(gammas) if i != j)
        profiles.append(tuple(_conditional_profile(ws, grid, others)))
    return _with_profiles(fit, tuple(profiles))


def _sequential_step(
    ws: _Workspace, grid: np.ndarray, current: tuple[float, ...], refine: bool
) -> tuple[float, ...]:
    """Add one threshold conditional on ``current``; optionally re-estimate the first."""
    k_new = len(current) + 1
    scan = _conditional_profile(ws, grid, current)
    if not scan:
        raise EstimationError(f"no admissible {k_new}-threshold split")
    g_new, _ = _argmin(scan)
    if refine:
        rescan = _conditional_profile(ws, grid, (g_new,))
        if rescan:
            g_old, _ = _argmin(rescan)
            return tuple(sorted((g_old, g_new)))
    return tuple(sorted((*current, g_new)))


def _with_profiles(fit: ThresholdFit, profiles) -> ThresholdFit:
    return ThresholdFit(
        **{
            **{f: getattr(fit, f) for f in fit.__dataclass_fields__},
            "ssr_profiles": profiles,
        }
    )


class BatchScanner:
    """Batched SSR scan over the candidate grid, conditional on fixed thresholds.

    Assembles every candidate's design in one (candidates, n, k) tensor from
    precomputed cumulative columns and factorizes them with one stacked QR
    call. Used inside bootstrap replications, where conditional scans depend
    on per-replication threshold estimates and cannot be factorized ahead of
    time. Candidates whose stacked factorization looks rank-deficient are
    re-solved through the pivoted path.
    """

    def __init__(self, ws: _Workspace, grid: np.ndarray):
        self.ws = ws
        self.grid = np.asarray(grid, dtype=float)
        self._values = list(self.grid)
        self._value_arr = self.grid.copy()
        self._index = {float(v): i for i, v in enumerate(self._values)}
        k1 = len(ws.rv_names)
        self._rv_cum = np.empty((len(self._values), ws.n_obs, k1))
        self._ind_cum = np.empty((len(self._values), ws.n_obs))
        self._n_le = np.empty(len(self._values))
        for i, v in enumerate(self._values):
            rv_cum, ind_cum = ws.cum(float(v))
            self._rv_cum[i] = rv_cum
            self._ind_cum[i] = ind_cum
            self._n_le[i] = np.count_nonzero(ws.q <= v)
        self._local = threading.local()
        self._grow_lock = threading.Lock()

    def _row(self, value: float) -> int:
        idx = self._index.get(value)
        if idx is None:
            with self._grow_lock:
                idx = self._index.get(value)
                if idx is not None:
                    return idx
                rv_cum, ind_cum = self.ws.cum(value)
                self._values.append(value)
                self._value_arr = np.append(self._value_arr, value)
                self._rv_cum = np.concatenate([self._rv_cum, rv_cum[None]], axis=0)
                self._ind_cum = np.concatenate([self._ind_cum, ind_cum[None]], axis=0)
                self._n_le = np.append(self._n_le, np.count_nonzero(self.ws.q <= value))
                idx = len(self._values) - 1
                self._index[value] = idx
        return idx

    def _buffer(self, kb: int) -> np.ndarray:
        """Per-thread design tensor for kb boundaries, with a trailing slot
        for the response column; the constant control block is written once
        per shape."""
        buffers = getattr(self._local, "buffers", None)
        if buffers is None:
            buffers = self._local.buffers = {}
        buf = buffers.get(kb)
        if buf is None:
            ws = self.ws
            k1 = len(ws.rv_names)
            k_total = (kb + 1) * k1
            if ws.spec.include_intercept_shift:
                k_total += kb
            k2 = ws.controls_dem.shape[1]
            buf = np.empty((self.grid.size, ws.n_obs, k_total + k2 + 1))
            if k2:
                buf[:, :, k_total:-1] = ws.controls_dem
            buffers[kb] = buf
        return buf

    def scan(self, fixed: tuple[float, ...], y: np.ndarray) -> tuple[float, float] | None:
        """(argmin candidate, min SSR) jointly admissible with ``fixed``."""
        ws = self.ws
        C = self.grid.size
        k1 = len(ws.rv_names)
        fixed_idx = [self._row(float(g)) for g in fixed]
        cand_idx = np.arange(C)
        # boundary index matrix, sorted by threshold value per candidate
        if fixed_idx:
            bidx = np.empty((C, len(fixed_idx) + 1), dtype=int)
            bidx[:, :-1] = fixed_idx
            bidx[:, -1] = cand_idx
            order = np.argsort(self._value_arr[bidx], axis=1, kind="stable")
            bidx = np.take_along_axis(bidx, order, axis=1)
        else:
            bidx = cand_idx[:, None]
        kb = bidx.shape[1]
        n_le = self._n_le[bidx]
        counts = np.diff(np.concatenate(
            [np.zeros((C, 1)), n_le, np.full((C, 1), ws.n_obs)], axis=1), axis=1)
        admissible = counts.min(axis=1) >= ws.floor
        if fixed:
            admissible &= ~np.isin(self.grid, np.asarray(fixed))
        if not admissible.any():
            return None
        X = self._buffer(kb)
        prev = None
        for j in range(kb):
            block = X[:, :, j * k1:(j + 1) * k1]
            np.take(self._rv_cum, bidx[:, j], axis=0, out=block)
            if prev is not None:
                block -= prev
            prev = self._rv_cum[bidx[:, j]]
        top = X[:, :, kb * k1:(kb + 1) * k1]
        np.subtract(ws.rv_full_dem[None], prev, out=top)
        offset = (kb + 1) * k1
        if ws.spec.include_intercept_shift:
            for j in range(kb):
                np.take(self._ind_cum, bidx[:, j], axis=0, out=X[:, :, offset + j])
            offset += kb
        X[:, :, -1] = y
        # R-only QR of [X | y]: the last diagonal is the residual norm of y
        # projected off the design columns, so Q is never formed.
        R = np.linalg.qr(X, mode="r")
        ssr = R[:, -1, -1] ** 2
        diag = np.abs(np.diagonal(R[:, :-1, :-1], axis1=1, axis2=2))
        shaky = (diag.min(axis=1) < 1e-10 * diag.max(axis=1)) & admissible
        for c in np.nonzero(shaky)[0]:
            ssr[c] = pivoted_lstsq(X[c, :, :-1], y, on_deficient="drop").ssr
        ssr = np.where(admissible, ssr, np.inf)
        i = int(np.argmin(ssr))
        return float(self.grid[i]), float(ssr[i])


class GridProjector:
    """Fixed-design SSR evaluator for bootstrap replications.

    In the fixed-regressor bootstrap the candidate designs never change
    across replications, only the regenerated response does. This class
    QR-factorizes the linear design and every admissible candidate design
    once; each replication then costs one batched projection.
    """

    def __init__(self, ws: _Workspace, grid: np.ndarray, fixed: tuple[float, ...] = ()):
        self.ws = ws
        cands: list[float] = []
        bases: list[np.ndarray] = []
        for c in grid:
            c = float(c)
            if c in fixed:
                continue
            gammas = tuple(sorted((*fixed, c)))
            if np.min(ws.regime_counts(gammas)) < ws.floor:
                continue
            X, _ = ws.design(gammas)
            bases.append(qr_projector(X))
            cands.append(c)
        if not cands:
            raise EstimationError(f"no admissible {len(fixed) + 1}-threshold split")
        self.candidates = np.array(cands)
        rmax = max(b.shape[1] for b in bases)
        stack = np.zeros((len(bases), ws.n_obs, rmax))
        for i, b in enumerate(bases):
            stack[i, :, : b.shape[1]] = b
        self._stack = stack
        cols = ws.linear_columns()
        X0 = np.column_stack(list(cols.values())) if cols else np.empty((ws.n_obs, 0))
        self._linear_basis = qr_projector(X0)

    def linear_ssr(self, y: np.ndarray) -> float:
        proj = self._linear_basis.T @ y
        return max(float(y @ y - proj @ proj), 0.0)

    def min_ssr(self, y: np.ndarray) -> tuple[float, float]:
        """(argmin candidate, min SSR) over the precomputed candidate designs."""
        proj = np.einsum("cnk,n->ck", self._stack, y)
        ssr = np.maximum(float(y @ y) - np.einsum("ck,ck->c", proj, proj), 0.0)
        i = int(np.argmin(ssr))
        return float(self.candidates[i]), float(ssr[i])
