from __future__ import annotations

import numpy as np
import pytest

from panelthresh import (
    ConfigError,
    DataError,
    correlation_matrix,
    ips_test,
    regime_descriptives,
)

from conftest import make_panel

MOMENT_DRAWS = 3000  # enough precision for direction/invariance checks


class TestRegimeDescriptives:
    def test_hand_computed_six_cells(self):
        q = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        v = np.array([[10.0, 20.0, 30.0], [40.0, 50.0, 60.0]])
        panel = make_panel({"q": q, "v": v})
        desc = regime_descriptives(panel, "q", 3.0)
        low = desc.low["v"]
        high = desc.high["v"]
        assert low.n_obs == 3 and high.n_obs == 3
        assert low.mean == pytest.approx(20.0, abs=1e-12)
        assert high.mean == pytest.approx(50.0, abs=1e-12)
        assert low.std == pytest.approx(10.0, abs=1e-12)  # sample sd of {10,20,30}
        assert desc.pooled["v"].mean == pytest.approx(35.0, abs=1e-12)
        assert desc.pooled["v"].min == 10.0 and desc.pooled["v"].max == 60.0

    def test_counts_sum_to_pooled(self, rng):
        panel = make_panel({"q": rng.uniform(0, 1, (4, 9)), "v": rng.standard_normal((4, 9))})
        desc = regime_descriptives(panel, "q", 0.4)
        assert desc.low["v"].n_obs + desc.high["v"].n_obs == desc.pooled["v"].n_obs

    def test_empty_upper_regime_absent(self, rng):
        q = rng.uniform(0, 1, (3, 5))
        panel = make_panel({"q": q, "v": rng.standard_normal((3, 5))})
        desc = regime_descriptives(panel, "q", float(q.max()))
        assert desc.high is None
        assert desc.low["v"].n_obs == desc.pooled["v"].n_obs
        assert desc.low["v"].mean == pytest.approx(desc.pooled["v"].mean, abs=1e-15)

    def test_min_le_mean_le_max(self, rng):
        panel = make_panel({"q": rng.uniform(0, 1, (4, 6)), "v": rng.standard_normal((4, 6))})
        desc = regime_descriptives(panel, "q", 0.5)
        for stats_map in (desc.pooled, desc.low, desc.high):
            s = stats_map["v"]
            assert s.min <= s.mean <= s.max


class TestCorrelationMatrix:
    def test_self_correlation_one(self, rng):
        x = rng.standard_normal((3, 8))
        panel = make_panel({"x": x, "y": rng.standard_normal((3, 8))})
        corr = correlation_matrix(panel, ["x", "y"])
        assert corr[0, 0] == 1.0 and corr[1, 1] == 1.0

    def test_anticorrelation_minus_one(self, rng):
        x = rng.standard_normal((3, 8))
        panel = make_panel({"x": x, "negx": -x})
        corr = correlation_matrix(panel, ["x", "negx"])
        assert corr[0, 1] == pytest.approx(-1.0, abs=1e-12)

    def test_symmetric_positive_semidefinite(self, rng):
        mats = {f"v{k}": rng.standard_normal((5, 12)) for k in range(8)}
        panel = make_panel(mats)
        corr = correlation_matrix(panel, list(mats))
        assert corr.shape == (8, 8)
        np.testing.assert_allclose(corr, corr.T, atol=1e-12)
        eigvals = np.linalg.eigvalsh(corr)
        assert eigvals.min() > -1e-8

    def test_zero_variance_named(self, rng):
        panel = make_panel({"flat": np.full((3, 4), 2.0), "x": rng.standard_normal((3, 4))})
        with pytest.raises(DataError, match="flat"):
            correlation_matrix(panel, ["flat", "x"])

    def test_needs_two_variables(self, rng):
        panel = make_panel({"x": rng.standard_normal((3, 4))})
        with pytest.raises(DataError, match="at least 2"):
            correlation_matrix(panel, ["x"])


def _series_panel(data):
    return make_panel({"v": data})


class TestIpsTest:
    def test_stationary_direction_fixture(self, rng):
        # Strongly stationary white noise: large negative statistic,
        # rejection at 1% with either deterministic specification.
        data = rng.standard_normal((8, 36))
        panel = _series_panel(data)
        for det in ("intercept", "intercept+trend"):
            res = ips_test(panel, "v", det, moment_draws=MOMENT_DRAWS)
            assert res.statistic < 0
            assert res.p_value < 0.01

    def test_affine_invariance(self, rng):
        data = rng.standard_normal((6, 30))
        a, b = 7.5, -3.0
        r1 = ips_test(_series_panel(data), "v", "intercept", moment_draws=MOMENT_DRAWS)
        r2 = ips_test(_series_panel(a * data + b), "v", "intercept", moment_draws=MOMENT_DRAWS)
        assert abs(r1.statistic - r2.statistic) < 1e-8
        assert abs(r1.t_bar - r2.t_bar) < 1e-8

    def test_random_walk_usually_keeps_null(self, rng):
        walks = np.cumsum(rng.standard_normal((8, 36)), axis=1)
        res = ips_test(_series_panel(walks), "v", "intercept", moment_draws=MOMENT_DRAWS)
        assert np.isfinite(res.statistic)
        assert 0.0 <= res.p_value <= 1.0

    def test_t_too_small(self, rng):
        panel = _series_panel(rng.standard_normal((4, 7)))
        with pytest.raises(DataError, match="too small"):
            ips_test(panel, "v", "intercept", max_lag=3)

    def test_constant_series_rejected(self, rng):
        data = rng.standard_normal((3, 20))
        data[1] = 4.2
        with pytest.raises(DataError, match="constant series"):
            ips_test(_series_panel(data), "v", "intercept", moment_draws=MOMENT_DRAWS)

    def test_deterministic_choice_validated(self, rng):
        panel = _series_panel(rng.standard_normal((3, 20)))
        with pytest.raises(ConfigError, match="deterministic"):
            ips_test(panel, "v", "trend-only")

    def test_lag_selection_bounded(self, rng):
        panel = _series_panel(rng.standard_normal((4, 30)))
        res = ips_test(panel, "v", "intercept", max_lag=3, moment_draws=MOMENT_DRAWS)
        assert all(0 <= p <= 3 for p in res.lags)
        assert len(res.per_unit_t) == 4
        assert res.t_bar == pytest.approx(float(np.mean(res.per_unit_t)), abs=1e-12)
