import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from growthmc.data import Standardization
from growthmc.errors import InvalidParamsError
from growthmc.growth_math import (
    GrowthParams,
    critical_points,
    critical_points_mmhg,
    derivatives,
    logistic_mean,
)
from helpers import critical_pressures_by_bisection

valid_params = st.builds(
    GrowthParams,
    a=st.floats(0.5, 20.0),
    b=st.floats(-15.0, 15.0),
    c=st.floats(0.1, 5.0),
)


class TestLogisticMean:
    def test_half_asymptote_at_inflection(self):
        assert logistic_mean(GrowthParams(5.0, -10.0, 1.0), 10.0) == pytest.approx(2.5)

    def test_symmetry_point(self):
        assert logistic_mean(GrowthParams(1.0, 0.0, 1.0), 0.0) == pytest.approx(0.5)

    def test_saturates_to_asymptote(self):
        assert logistic_mean(GrowthParams(5.0, -10.0, 1.0), 1000.0) == pytest.approx(
            5.0, abs=1e-12
        )

    def test_extreme_arguments_never_nan(self):
        p = GrowthParams(5.0, -10.0, 1.0)
        for x in (-1e12, -1e6, 0.0, 1e6, 1e12):
            v = logistic_mean(p, x)
            assert math.isfinite(v)
            assert 0.0 <= v <= 5.0

    def test_vectorized(self):
        p = GrowthParams(2.0, 0.0, 1.0)
        out = logistic_mean(p, np.array([-1.0, 0.0, 1.0]))
        assert out.shape == (3,)
        assert out[1] == pytest.approx(1.0)

    @settings(max_examples=50, deadline=None)
    @given(valid_params)
    def test_monotone_increasing(self, p):
        xs = np.linspace((-8 - p.b) / p.c, (8 - p.b) / p.c, 64)
        vals = logistic_mean(p, xs)
        assert np.all(np.diff(vals) > 0.0)


class TestDerivatives:
    def test_first_derivative_at_symmetry(self):
        d1, _, _ = derivatives(GrowthParams(1.0, 0.0, 1.0), 0.0)
        assert d1 == pytest.approx(0.25)

    def test_second_derivative_vanishes_at_inflection(self):
        p = GrowthParams(3.0, 2.0, 1.5)
        _, d2, _ = derivatives(p, -p.b / p.c)
        assert abs(d2) < 1e-10

    @settings(max_examples=100, deadline=None)
    @given(
        valid_params,
        st.floats(-3.0, 3.0),
    )
    def test_matches_finite_differences(self, p, t):
        # probe near the interesting part of the curve; fourth-order central
        # stencils keep both truncation and roundoff below 1e-6 relative
        x = (t - p.b) / p.c
        h = 5e-3 / p.c
        f = lambda z: float(logistic_mean(p, z))
        s = [f(x + k * h) for k in range(-3, 4)]  # s[3] is f(x)
        fd1 = (-s[5] + 8 * s[4] - 8 * s[2] + s[1]) / (12 * h)
        fd2 = (-s[5] + 16 * s[4] - 30 * s[3] + 16 * s[2] - s[1]) / (12 * h**2)
        fd3 = (s[0] - 8 * s[1] + 13 * s[2] - 13 * s[4] + 8 * s[5] - s[6]) / (8 * h**3)
        d1, d2, d3 = derivatives(p, x)
        assert d1 == pytest.approx(fd1, rel=1e-6, abs=1e-6 * p.a * p.c)
        assert d2 == pytest.approx(fd2, rel=1e-6, abs=1e-6 * p.a * p.c**2)
        assert d3 == pytest.approx(fd3, rel=1e-6, abs=1e-6 * p.a * p.c**3)


class TestCriticalPoints:
    def test_worked_example(self):
        cp = critical_points(GrowthParams(5.0, -10.0, 1.0))
        assert cp.ip.pressure == pytest.approx(10.0)
        assert cp.ip.volume == pytest.approx(2.5)
        assert cp.adp.pressure == pytest.approx(12.2924, abs=1e-4)
        assert cp.adp.volume == pytest.approx(4.5412, abs=1e-4)
        assert cp.map.pressure == pytest.approx(8.6830, abs=1e-4)
        assert cp.map.volume == pytest.approx(1.0566, abs=1e-4)
        assert cp.mdp.pressure == pytest.approx(11.3170, abs=1e-4)
        assert cp.mdp.volume == pytest.approx(3.9434, abs=1e-4)
        assert cp.asymptote == 5.0

    def test_ip_volume_is_half_asymptote_exactly(self):
        cp = critical_points(GrowthParams(7.31, 2.0, 0.7))
        assert cp.ip.volume == 7.31 / 2

    def test_rejects_nonpositive_slope_or_asymptote(self):
        with pytest.raises(InvalidParamsError):
            critical_points(GrowthParams(1.0, 0.0, 0.0))
        with pytest.raises(InvalidParamsError):
            critical_points(GrowthParams(1.0, 0.0, -1.0))
        with pytest.raises(InvalidParamsError):
            critical_points(GrowthParams(-1.0, 0.0, 1.0))

    @settings(max_examples=60, deadline=None)
    @given(valid_params)
    def test_matches_bisection_oracle(self, p):
        cp = critical_points(p)
        oracle = critical_pressures_by_bisection(p)
        assert cp.ip.pressure == pytest.approx(oracle["IP"], abs=1e-8)
        assert cp.map.pressure == pytest.approx(oracle["MAP"], abs=1e-8)
        assert cp.mdp.pressure == pytest.approx(oracle["MDP"], abs=1e-8)
        assert cp.adp.pressure == pytest.approx(oracle["ADP"], abs=1e-8)

    @settings(max_examples=60, deadline=None)
    @given(valid_params)
    def test_volumes_lie_on_curve_and_order(self, p):
        cp = critical_points(p)
        for pt in (cp.map, cp.ip, cp.mdp, cp.adp):
            assert pt.volume == pytest.approx(
                float(logistic_mean(p, pt.pressure)), abs=1e-10
            )
        assert cp.map.pressure < cp.ip.pressure < cp.mdp.pressure < cp.adp.pressure
        assert cp.map.volume < cp.ip.volume < cp.mdp.volume < cp.adp.volume < cp.asymptote

    @settings(max_examples=40, deadline=None)
    @given(valid_params, st.floats(0.5, 4.0))
    def test_scale_equivariance(self, p, k):
        base = critical_points(p)
        scaled = critical_points(GrowthParams(k * p.a, p.b, p.c))
        for name in ("ip", "adp", "map", "mdp"):
            assert getattr(scaled, name).pressure == pytest.approx(
                getattr(base, name).pressure, rel=1e-12
            )
            assert getattr(scaled, name).volume == pytest.approx(
                k * getattr(base, name).volume, rel=1e-12
            )

    @settings(max_examples=40, deadline=None)
    @given(valid_params, st.floats(-5.0, 5.0))
    def test_translation(self, p, shift):
        base = critical_points(p)
        moved = critical_points(GrowthParams(p.a, p.b - p.c * shift, p.c))
        for name in ("ip", "adp", "map", "mdp"):
            assert getattr(moved, name).pressure == pytest.approx(
                getattr(base, name).pressure + shift, rel=1e-9, abs=1e-9
            )


class TestCriticalPointsMmhg:
    def test_identity_standardization(self):
        p = GrowthParams(5.0, -10.0, 1.0)
        raw = critical_points_mmhg(p, Standardization.identity())
        std = critical_points(p)
        assert raw == std

    def test_back_transform(self):
        s = Standardization(pressure_mean=10.0, pressure_sd=2.0, age_mean=0.0, age_sd=1.0)
        p = GrowthParams(5.0, 0.0, 1.0)  # standardized ip pressure 0
        raw = critical_points_mmhg(p, s)
        assert raw.ip.pressure == pytest.approx(10.0)
        assert raw.ip.volume == 2.5

    def test_round_trip(self):
        s = Standardization(pressure_mean=11.3, pressure_sd=2.7, age_mean=60.0, age_sd=9.0)
        p = GrowthParams(4.2, -3.0, 1.7)
        raw = critical_points_mmhg(p, s)
        std = critical_points(p)
        for name in ("ip", "adp", "map", "mdp"):
            z = (getattr(raw, name).pressure - s.pressure_mean) / s.pressure_sd
            assert z == pytest.approx(getattr(std, name).pressure, abs=1e-12)
