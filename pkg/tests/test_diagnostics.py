import numpy as np
import pytest

from growthmc.diagnostics import (
    DiagnosticsReport,
    ParamSeries,
    autocorrelation,
    check_convergence,
    draws_param_series,
    effective_sample_size,
    gelman_rubin,
)
from growthmc.errors import GrowthMcError, ZeroVarianceError
from growthmc.model import REFERENCE_ESTIMATES, THETA_NAMES
from helpers import degenerate_draws, tiny_dataset


def _ar1(rho, n, rng, mu=0.0):
    x = np.empty(n)
    x[0] = rng.standard_normal()
    innov_sd = np.sqrt(1 - rho**2)
    eps = rng.standard_normal(n) * innov_sd
    for t in range(1, n):
        x[t] = rho * x[t - 1] + eps[t]
    return mu + x


class TestAutocorrelation:
    def test_lag_zero_is_one(self):
        rng = np.random.default_rng(0)
        acf = autocorrelation(rng.standard_normal(500), 20)
        assert acf[0] == 1.0

    def test_iid_within_band(self):
        rng = np.random.default_rng(1)
        acf = autocorrelation(rng.standard_normal(10000), 5)
        assert abs(acf[1]) < 0.05  # ~2/sqrt(n) band

    def test_ar1_lag_one(self):
        rng = np.random.default_rng(2)
        acf = autocorrelation(_ar1(0.9, 20000, rng), 10)
        assert acf[1] == pytest.approx(0.9, abs=0.05)

    def test_constant_series_raises(self):
        with pytest.raises(ZeroVarianceError):
            autocorrelation(np.ones(100), 10)

    def test_max_lag_bounds(self):
        with pytest.raises(GrowthMcError):
            autocorrelation(np.arange(10.0), 10)

    def test_affine_invariance_exact(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(400)
        a = autocorrelation(x, 30)
        b = autocorrelation(5.0 * x, 30)
        np.testing.assert_allclose(a, b, atol=1e-12)
        c = autocorrelation(x + 7.0, 30)
        np.testing.assert_allclose(a, c, atol=1e-9)


class TestEffectiveSampleSize:
    def test_iid_close_to_n(self):
        rng = np.random.default_rng(4)
        n = 5000
        chains = [rng.standard_normal(n) for _ in range(3)]
        ess = effective_sample_size(chains)
        assert 0.8 * 3 * n <= ess <= 1.2 * 3 * n

    def test_ar1_matches_analytic(self):
        rng = np.random.default_rng(5)
        rho, n = 0.9, 50000
        ess = effective_sample_size([_ar1(rho, n, rng)])
        expected = n * (1 - rho) / (1 + rho)
        assert ess == pytest.approx(expected, rel=0.3)

    def test_duplicated_trending_chains_have_low_ess(self):
        rng = np.random.default_rng(6)
        base = np.linspace(0, 3, 2000) + 0.1 * rng.standard_normal(2000)
        ess = effective_sample_size([base, base.copy()])
        assert ess < 0.05 * 4000

    def test_zero_variance_raises(self):
        with pytest.raises(ZeroVarianceError):
            effective_sample_size([np.ones(100), np.ones(100)])

    def test_affine_invariance(self):
        rng = np.random.default_rng(7)
        chains = [_ar1(0.5, 3000, rng) for _ in range(2)]
        a = effective_sample_size(chains)
        b = effective_sample_size([3.0 * c - 11.0 for c in chains])
        assert a == pytest.approx(b, rel=1e-10)

    def test_never_wildly_exceeds_total(self):
        rng = np.random.default_rng(8)
        for _ in range(5):
            chains = [rng.standard_normal(1000) for _ in range(2)]
            assert effective_sample_size(chains) <= 1.25 * 2000


class TestGelmanRubin:
    def test_iid_chains_near_one(self):
        rng = np.random.default_rng(9)
        chains = [rng.standard_normal(10000) for _ in range(3)]
        assert 0.99 <= gelman_rubin(chains) <= 1.02

    def test_offset_chains_flagged(self):
        rng = np.random.default_rng(10)
        chains = [rng.standard_normal(2000), rng.standard_normal(2000) + 10.0]
        assert gelman_rubin(chains) > 1.5

    def test_single_chain_uses_its_halves(self):
        rng = np.random.default_rng(11)
        assert 0.99 <= gelman_rubin([rng.standard_normal(10000)]) <= 1.02

    def test_single_trending_chain_detected(self):
        x = np.linspace(0.0, 5.0, 4000) + 0.01 * np.random.default_rng(1).standard_normal(4000)
        assert gelman_rubin([x]) > 1.5

    def test_common_affine_invariance(self):
        rng = np.random.default_rng(12)
        chains = [_ar1(0.4, 2000, rng) for _ in range(3)]
        a = gelman_rubin(chains)
        b = gelman_rubin([2.5 * c + 4.0 for c in chains])
        assert a == pytest.approx(b, rel=1e-10)

    def test_zero_variance_raises(self):
        with pytest.raises(ZeroVarianceError):
            gelman_rubin([np.ones(100), np.ones(100)])


class TestParamSeries:
    def test_unequal_lengths_rejected(self):
        with pytest.raises(GrowthMcError):
            ParamSeries("x", (np.zeros(20), np.zeros(21)))

    def test_too_short_rejected(self):
        with pytest.raises(GrowthMcError):
            ParamSeries("x", (np.zeros(5),))


class TestCheckConvergence:
    def _synthetic_draws(self, n_draws=400, jitter=1.0, seed=0):
        """iid draws around the reference values: converged by construction."""
        rng = np.random.default_rng(seed)
        ds = tiny_dataset()
        draws = degenerate_draws(REFERENCE_ESTIMATES, ds, n_draws=n_draws)
        for chain in range(2):
            theta = np.tile(REFERENCE_ESTIMATES.to_array(), (n_draws, 1))
            theta += jitter * 0.01 * rng.standard_normal(theta.shape)
            u = 0.1 * rng.standard_normal((n_draws, ds.n_patients, 2))
            draws.chains.append(
                type(draws.chains[0])(
                    theta=theta,
                    u=u,
                    accept_theta=np.zeros(11),
                    accept_u=np.zeros(ds.n_patients),
                    accept_shear=np.zeros(6),
                    chain_index=chain + 1,
                )
            )
        draws.chains = draws.chains[1:]  # drop the degenerate seed chain
        return draws

    def test_iid_draws_pass(self):
        report = check_convergence(self._synthetic_draws())
        assert report.passed
        assert report.failures == []
        names = {p.name for p in report.params}
        assert set(THETA_NAMES) <= names
        assert any(name.startswith("u_a[") for name in names)

    def test_constant_parameter_flagged_not_crashed(self):
        draws = self._synthetic_draws()
        for c in draws.chains:
            c.theta[:, 0] = 5.0  # freeze beta0_a without declaring it fixed
        report = check_convergence(draws)
        assert not report.passed
        assert any("zero variance" in f for f in report.failures)
        assert report.param("beta0_a").zero_variance

    def test_infinite_ess_threshold_fails_everything(self):
        draws = self._synthetic_draws()
        report = check_convergence(draws, threshold_ess=float("inf"))
        assert not report.passed
        sampled = [p.name for p in report.params]
        failed = {f.split(":")[0] for f in report.failures}
        assert failed == set(sampled)

    def test_fixed_coordinates_excluded(self):
        draws = self._synthetic_draws()
        draws.config = type(draws.config)(
            n_chains=2, iterations=400, thin=1, seed=0, fixed={"betaW_c": 0.0}
        )
        for c in draws.chains:
            c.theta[:, THETA_NAMES.index("betaW_c")] = 0.0
        report = check_convergence(draws)
        assert report.passed
        assert "betaW_c" not in {p.name for p in report.params}

    def test_report_serializes_and_caps_ess(self):
        draws = self._synthetic_draws()
        report = check_convergence(draws)
        d = report.to_dict()
        assert d["passed"] is True
        total = draws.n_draws_per_chain * len(draws.chains)
        for p in report.params:
            assert 0.0 < p.ess <= total

    def test_series_extraction_matches_chain_columns(self):
        draws = self._synthetic_draws()
        series = {s.name: s for s in draws_param_series(draws)}
        np.testing.assert_array_equal(
            series["sigma"].chains[0], draws.chains[0].theta[:, THETA_NAMES.index("sigma")]
        )
        pid = draws.patient_ids[1]
        np.testing.assert_array_equal(
            series[f"u_b[{pid}]"].chains[1], draws.chains[1].u[:, 1, 1]
        )

    def test_table_rendering(self):
        report = check_convergence(self._synthetic_draws())
        text = report.format_table()
        assert "overall: PASS" in text
        assert "sigma" in text
