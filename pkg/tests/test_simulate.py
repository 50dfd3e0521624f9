from __future__ import annotations

import numpy as np
import pytest

from panelthresh import (
    ConfigError,
    ThresholdDGP,
    benchmark_dgp,
    default_spec,
    fit_at,
    monte_carlo,
    simulate_threshold_panel,
)


class TestDgpValidation:
    def test_dimension_floor(self):
        with pytest.raises(ConfigError):
            ThresholdDGP(n_units=1, n_periods=10, gamma0=0.5, beta_low=(0.0,), beta_high=(1.0,))

    def test_rho_range(self):
        with pytest.raises(ConfigError):
            ThresholdDGP(
                n_units=4, n_periods=10, gamma0=0.5, beta_low=(0.0,), beta_high=(1.0,),
                endogeneity_rho=1.5,
            )

    def test_dist_descriptor_parse(self):
        with pytest.raises(ConfigError, match="threshold_dist"):
            ThresholdDGP(
                n_units=4, n_periods=10, gamma0=0.5, beta_low=(0.0,), beta_high=(1.0,),
                threshold_dist="cauchy(0,1)",
            )

    def test_multi_threshold_needs_beta_regimes(self):
        with pytest.raises(ConfigError, match="beta_regimes"):
            ThresholdDGP(
                n_units=4, n_periods=10, gamma0=(0.3, 0.6),
                beta_low=(0.0,), beta_high=(1.0,),
            )

    def test_theta_range(self):
        with pytest.raises(ConfigError):
            ThresholdDGP(
                n_units=4, n_periods=10, gamma0=0.5, beta_low=(0.0,), beta_high=(1.0,),
                theta0=1.0,
            )


class TestSimulateThresholdPanel:
    def test_same_seed_bit_identical(self):
        dgp = benchmark_dgp(seed=77)
        p1, t1 = simulate_threshold_panel(dgp)
        p2, t2 = simulate_threshold_panel(dgp)
        assert p1.equals(p2)
        assert t1.gammas == t2.gammas

    def test_different_seed_differs(self):
        p1, _ = simulate_threshold_panel(benchmark_dgp(seed=1))
        p2, _ = simulate_threshold_panel(benchmark_dgp(seed=2))
        assert not p1.equals(p2)

    def test_truth_roundtrip_zero_noise(self):
        dgp = ThresholdDGP(
            n_units=5, n_periods=20, gamma0=0.5, beta_low=(0.25,), beta_high=(1.5,),
            delta0=0.8, noise_sd=0.0, threshold_dist="uniform(0,1)", seed=55,
        )
        panel, truth = simulate_threshold_panel(dgp)
        spec = default_spec(truth)
        fit = fit_at(panel, spec, truth.gammas)
        assert abs(fit.betas_by_regime[0][0] - 0.25) < 1e-8
        assert abs(fit.betas_by_regime[1][0] - 1.5) < 1e-8
        assert fit.delta is not None and abs(fit.delta[0] - 0.8) < 1e-8

    def test_endogeneity_emits_instruments(self):
        dgp = ThresholdDGP(
            n_units=4, n_periods=12, gamma0=0.5, beta_low=(0.0,), beta_high=(1.0,),
            endogeneity_rho=0.6, seed=5,
        )
        panel, truth = simulate_threshold_panel(dgp)
        assert {"z1", "z2"} <= set(panel.variable_names)
        assert truth.roles.instruments == ("z1", "z2")
        # instruments are relevant for the threshold variable
        q = panel.values("q").ravel()
        z1 = panel.values("z1").ravel()
        assert abs(np.corrcoef(q, z1)[0, 1]) > 0.2

    def test_controls_emitted(self):
        dgp = ThresholdDGP(
            n_units=4, n_periods=12, gamma0=0.5, beta_low=(0.0,), beta_high=(1.0,),
            control_betas=(0.5, -0.5), seed=6,
        )
        panel, truth = simulate_threshold_panel(dgp)
        assert {"c1", "c2"} <= set(panel.variable_names)
        assert truth.roles.invariant_controls == ("c1", "c2")

    def test_dynamic_lag_generation(self):
        dgp = ThresholdDGP(
            n_units=4, n_periods=15, gamma0=0.5, beta_low=(0.2,), beta_high=(1.0,),
            theta0=0.5, noise_sd=0.1, seed=8,
        )
        panel, truth = simulate_threshold_panel(dgp)
        assert panel.n_periods == 15
        assert truth.theta == 0.5

    def test_benchmark_preset_shape(self):
        panel, truth = simulate_threshold_panel(benchmark_dgp(seed=42))
        assert (panel.n_units, panel.n_periods) == (8, 36)
        q = panel.values("q")
        low = q[q <= 12.741]
        high = q[q > 12.741]
        # lognormal calibration: regime means near 8 and 25, majority below
        assert 0.45 <= low.size / q.size <= 0.70
        assert 5.0 <= low.mean() <= 11.0
        assert 18.0 <= high.mean() <= 34.0

    def test_rng_metadata_recorded(self):
        panel, truth = simulate_threshold_panel(benchmark_dgp(seed=3))
        assert "PCG64" in panel.metadata["generator"] or "PCG64" in truth.rng["generator"]


class TestMonteCarlo:
    def test_trials_floor(self):
        with pytest.raises(ConfigError, match="49"):
            monte_carlo("recovery", 49, benchmark_dgp())

    def test_unknown_experiment(self):
        with pytest.raises(ConfigError, match="experiment"):
            monte_carlo("bias", 50, benchmark_dgp())

    def test_recovery_metrics_and_determinism(self):
        dgp = benchmark_dgp(contrast=0.5, noise_sd=1.0)
        s1 = monte_carlo("recovery", 50, dgp, master_seed=9)
        s2 = monte_carlo("recovery", 50, dgp, master_seed=9, threads=4)
        assert s1.metrics == s2.metrics
        assert {"hit_rate", "hit_rate_mc_se", "bias", "rmse"} <= set(s1.metrics)
        assert s1.rng["generator"].startswith("numpy PCG64")

    def test_coverage_experiment_runs(self):
        dgp = benchmark_dgp(contrast=0.5, noise_sd=2.0)
        s = monte_carlo("coverage", 50, dgp, master_seed=10)
        assert 0.0 <= s.metrics["coverage_rate"] <= 1.0

    @pytest.mark.slow
    def test_size_experiment_near_nominal(self):
        dgp = benchmark_dgp(contrast=0.0, noise_sd=1.0)
        s = monte_carlo("size", 100, dgp, master_seed=11, replications=99)
        assert 0.0 <= s.metrics["rejection_rate"] <= 0.15
