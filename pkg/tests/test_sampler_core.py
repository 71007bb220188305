import math

import numpy as np
import pytest
from scipy import stats

from growthmc.sampler import adapt_scales, metropolis_sweep, sample_target
from growthmc.diagnostics import effective_sample_size


class TestAdaptScales:
    def test_full_acceptance_grows_scale(self):
        out = adapt_scales(np.array([1.0]), np.array([0.5]), batch=1)
        assert out[0] > 0.5

    def test_zero_acceptance_shrinks_scale(self):
        out = adapt_scales(np.array([0.0]), np.array([0.5]), batch=1)
        assert out[0] < 0.5

    def test_step_size_decays_with_batch(self):
        s1 = adapt_scales(np.array([1.0]), np.array([1.0]), batch=1)
        s2 = adapt_scales(np.array([1.0]), np.array([1.0]), batch=10_000)
        assert s1[0] == pytest.approx(math.exp(0.05))
        assert s2[0] == pytest.approx(math.exp(0.01))

    def test_frozen_is_noop_with_warning(self):
        scales = np.array([0.7, 1.3])
        with pytest.warns(RuntimeWarning, match="frozen"):
            out = adapt_scales(np.array([1.0, 0.0]), scales, batch=3, frozen=True)
        np.testing.assert_array_equal(out, scales)

    def test_at_target_unchanged(self):
        out = adapt_scales(np.array([0.44]), np.array([2.0]), batch=1, target_accept=0.44)
        assert out[0] == 2.0


def _std_normal_logp(x):
    return -0.5 * float(x @ x)


class TestMetropolisSweep:
    def test_zero_scale_accepts_without_moving(self):
        rng = np.random.default_rng(0)
        x = np.array([1.3, -0.4])
        out, lp, accepted = metropolis_sweep(_std_normal_logp, x, [0.0, 0.0], rng)
        np.testing.assert_array_equal(out, x)
        assert accepted.all()

    def test_requires_finite_start(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            metropolis_sweep(lambda x: float("-inf"), np.zeros(1), [1.0], rng)

    def test_blocked_proposal_moves_jointly(self):
        rng = np.random.default_rng(1)
        x = np.zeros(4)
        out, _, accepted = metropolis_sweep(
            _std_normal_logp, x, [0.5, 0.5], rng, blocks=[[0, 1], [2, 3]]
        )
        # within a block, both coordinates move together or not at all
        for bi, idx in enumerate(([0, 1], [2, 3])):
            moved = [out[i] != 0.0 for i in idx]
            assert all(moved) == accepted[bi]
            assert any(moved) == accepted[bi]


class TestStandardNormalTarget:
    def test_moments_match_within_mc_error(self):
        rng = np.random.default_rng(7)
        samples, acc = sample_target(
            _std_normal_logp,
            np.zeros(1),
            n_sweeps=20000,
            rng=rng,
            burn_in=2000,
            scales=np.array([1.0]),
        )
        x = samples[:, 0]
        ess = effective_sample_size([x])
        se_mean = 1.0 / math.sqrt(ess)
        assert abs(x.mean()) < 3 * se_mean
        se_var = math.sqrt(2.0 / ess)
        assert abs(x.var(ddof=1) - 1.0) < 3 * se_var
        assert 0.1 < acc[0] < 0.7

    def test_detailed_balance_empirical_cdf(self):
        # thinned draws from a long run must be N(0,1) by Kolmogorov-Smirnov
        rng = np.random.default_rng(12)
        samples, _ = sample_target(
            _std_normal_logp,
            np.zeros(1),
            n_sweeps=60000,
            rng=rng,
            burn_in=2000,
            thin=25,
            scales=np.array([2.4]),
        )
        stat = stats.kstest(samples[:, 0], "norm")
        assert stat.pvalue > 0.01


class TestConditionalSampling:
    def test_pinned_coordinate_samples_its_conditional(self):
        # bivariate normal, corr rho: with x2 pinned by a zero proposal scale,
        # x1 must sample its analytic conditional N(rho*v, 1-rho^2)
        rho = 0.8
        prec = 1.0 / (1.0 - rho**2)

        def logp(x):
            return -0.5 * prec * float(x[0] ** 2 - 2 * rho * x[0] * x[1] + x[1] ** 2)

        v = 1.5
        rng = np.random.default_rng(3)
        samples, _ = sample_target(
            logp,
            np.array([0.0, v]),
            n_sweeps=40000,
            rng=rng,
            burn_in=2000,
            scales=np.array([1.0, 0.0]),
            thin=10,
        )
        np.testing.assert_array_equal(samples[:, 1], np.full(samples.shape[0], v))
        x1 = samples[:, 0]
        ess = effective_sample_size([x1])
        cond_mean = rho * v
        cond_sd = math.sqrt(1 - rho**2)
        assert abs(x1.mean() - cond_mean) < 3 * cond_sd / math.sqrt(ess)
        assert x1.std(ddof=1) == pytest.approx(cond_sd, rel=0.1)
