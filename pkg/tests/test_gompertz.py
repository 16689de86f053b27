"""Gompertz distribution: analytic values, limits, and inversion round trips."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from jointcure.gompertz import (
    DomainError,
    GompertzParams,
    InvalidParameterError,
    cumulative_hazard,
    cure_fraction,
    growth_integral,
    growth_integral_dalpha,
    hazard,
    log_growth_integral,
    pdf,
    survival,
    susceptible_quantile,
)

DEFECTIVE = GompertzParams(alpha=-1.0, mu=1.0)


class TestParams:
    def test_rejects_nonpositive_mu(self):
        with pytest.raises(InvalidParameterError):
            GompertzParams(alpha=-1.0, mu=0.0)
        with pytest.raises(InvalidParameterError):
            GompertzParams(alpha=-1.0, mu=-2.0)

    def test_rejects_nonfinite(self):
        with pytest.raises(InvalidParameterError):
            GompertzParams(alpha=math.nan, mu=1.0)
        with pytest.raises(InvalidParameterError):
            GompertzParams(alpha=0.0, mu=math.inf)

    def test_gamma0_accessor(self):
        p = GompertzParams(alpha=-0.5, mu=2.0)
        assert p.gamma0 == pytest.approx(math.log(2.0))
        assert GompertzParams.from_gamma0(-0.5, math.log(2.0)).mu == pytest.approx(2.0)


class TestPdf:
    def test_at_zero_equals_mu(self):
        assert pdf(0.0, DEFECTIVE) == pytest.approx(1.0)
        assert pdf(0.0, GompertzParams(alpha=0.3, mu=2.5)) == pytest.approx(2.5)

    def test_matches_negative_survival_derivative(self):
        # independent oracle: central finite difference of survival
        t, h = 1.1814, 1e-5
        fd = -(survival(t + h, DEFECTIVE) - survival(t - h, DEFECTIVE)) / (2 * h)
        assert pdf(t, DEFECTIVE) == pytest.approx(fd, abs=1e-6)

    def test_exponential_limit(self):
        p = GompertzParams(alpha=0.0, mu=2.0)
        assert pdf(0.5, p) == pytest.approx(2.0 * math.exp(-1.0), rel=1e-12)

    def test_rejects_bad_time(self):
        with pytest.raises(InvalidParameterError):
            pdf(-0.1, DEFECTIVE)
        with pytest.raises(InvalidParameterError):
            pdf(math.nan, DEFECTIVE)


class TestSurvival:
    def test_at_origin(self):
        for p in (DEFECTIVE, GompertzParams(0.0, 3.0), GompertzParams(1.2, 0.4)):
            assert survival(0.0, p) == 1.0

    def test_defective_limit_is_cure_fraction(self):
        assert survival(1e6, DEFECTIVE) == pytest.approx(math.exp(-1.0), abs=1e-12)

    def test_median_from_quantile_and_quadrature(self):
        # t solving F(t) = 0.5, checked two independent ways
        t = susceptible_quantile(0.5, DEFECTIVE)
        assert survival(t, DEFECTIVE) == pytest.approx(0.5, abs=1e-4)
        mass, _ = quad(lambda u: pdf(u, DEFECTIVE), 0.0, t)
        assert mass == pytest.approx(0.5, abs=1e-6)
        assert t == pytest.approx(1.1814, abs=1e-4)


class TestHazard:
    def test_boundary_values(self):
        p = GompertzParams(alpha=-0.5, mu=2.0)
        assert hazard(0.0, p) == pytest.approx(2.0)
        assert cumulative_hazard(0.0, p) == 0.0

    def test_exponential_limit_cumulative(self):
        assert cumulative_hazard(2.0, GompertzParams(0.0, 1.5)) == pytest.approx(3.0)

    def test_cumulative_matches_minus_log_survival(self):
        assert cumulative_hazard(1.1814, DEFECTIVE) == pytest.approx(0.6931, abs=1e-4)

    def test_identity_with_survival(self):
        for alpha in (-1.3, -0.2, 0.0, 0.4):
            p = GompertzParams(alpha, 0.7)
            for t in (0.0, 0.5, 2.0, 10.0):
                assert math.exp(-cumulative_hazard(t, p)) == pytest.approx(survival(t, p), abs=1e-12)


class TestCureFraction:
    def test_defective_value(self):
        assert cure_fraction(DEFECTIVE) == pytest.approx(math.exp(-1.0))

    def test_proper_fit_has_no_plateau(self):
        # shape/scale of the proper-Gompertz comparison fit
        assert cure_fraction(GompertzParams(alpha=0.02, mu=math.exp(-1.57))) == 0.0
        assert cure_fraction(GompertzParams(alpha=0.0, mu=1.0)) == 0.0

    def test_scenario_truth_value(self):
        p = GompertzParams(alpha=-0.65, mu=math.exp(-0.68))
        assert cure_fraction(p) == pytest.approx(math.exp(math.exp(-0.68) / -0.65), rel=1e-12)
        assert cure_fraction(p) == pytest.approx(0.4586, abs=2e-4)


class TestSusceptibleQuantile:
    def test_zero_quantile(self):
        assert susceptible_quantile(0.0, DEFECTIVE) == 0.0
        assert susceptible_quantile(0.0, GompertzParams(0.4, 2.0), eta=1.3) == 0.0

    def test_half_quantile(self):
        t = susceptible_quantile(0.5, DEFECTIVE)
        assert t == pytest.approx(1.18140, abs=1e-4)
        assert survival(t, DEFECTIVE) == pytest.approx(0.5, rel=1e-10)

    def test_beyond_susceptible_mass_raises(self):
        mass = 1.0 - cure_fraction(DEFECTIVE)
        with pytest.raises(DomainError):
            susceptible_quantile(mass, DEFECTIVE)
        with pytest.raises(DomainError):
            susceptible_quantile(mass + 1e-12, DEFECTIVE)

    def test_invalid_u(self):
        for u in (-0.1, 1.0, 1.5, math.nan):
            with pytest.raises(InvalidParameterError):
                susceptible_quantile(u, DEFECTIVE)

    def test_respects_eta(self):
        eta = 0.7
        t = susceptible_quantile(0.3, DEFECTIVE, eta=eta)
        boosted = GompertzParams(alpha=DEFECTIVE.alpha, mu=DEFECTIVE.mu * math.exp(eta))
        assert 1.0 - survival(t, boosted) == pytest.approx(0.3, rel=1e-10)


class TestInvariants:
    @given(
        alpha=st.floats(-3.0, -0.05),
        mu=st.floats(0.05, 3.0),
        t=st.floats(0.0, 50.0),
    )
    @settings(max_examples=200, deadline=None)
    def test_survival_bounded_below_by_cure(self, alpha, mu, t):
        p = GompertzParams(alpha, mu)
        assert survival(t, p) >= cure_fraction(p) - 1e-15

    @given(alpha=st.floats(-3.0, -0.05), mu=st.floats(0.05, 3.0))
    @settings(max_examples=100, deadline=None)
    def test_survival_decreases_to_plateau(self, alpha, mu):
        p = GompertzParams(alpha, mu)
        # horizon scaled to the decay rate: exp(alpha*t) is ~1e-13 at the end
        ts = np.linspace(0.0, 30.0 / abs(alpha), 200)
        s = survival(ts, p)
        assert np.all(np.diff(s) <= 1e-15)
        assert s[-1] - cure_fraction(p) < 1e-6

    def test_proper_survival_vanishes(self):
        assert survival(200.0, GompertzParams(0.3, 0.5)) < 1e-8
        assert survival(5e3, GompertzParams(0.0, 0.5)) < 1e-8

    @given(
        alpha=st.floats(-2.0, -0.1),
        mu=st.floats(0.1, 2.0),
        u=st.floats(0.0, 0.999),
    )
    @settings(max_examples=200, deadline=None)
    def test_quantile_round_trip(self, alpha, mu, u):
        p = GompertzParams(alpha, mu)
        mass = 1.0 - cure_fraction(p)
        u = u * (mass - 1e-9)
        t = susceptible_quantile(u, p)
        assert 1.0 - math.exp(-cumulative_hazard(t, p)) == pytest.approx(u, abs=1e-10)

    def test_pdf_integrates_to_susceptible_mass(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            p = GompertzParams(float(rng.uniform(-3, -0.05)), float(rng.uniform(0.05, 3)))
            mass, _ = quad(lambda u: pdf(u, p), 0.0, np.inf, limit=200)
            assert mass == pytest.approx(1.0 - cure_fraction(p), abs=1e-6)

    def test_alpha_zero_continuity(self):
        mu = 1.3
        for t in (0.3, 1.0, 5.0):
            ref_s = survival(t, GompertzParams(0.0, mu))
            ref_f = pdf(t, GompertzParams(0.0, mu))
            for alpha in (1e-8, -1e-8):
                p = GompertzParams(alpha, mu)
                assert survival(t, p) == pytest.approx(ref_s, rel=1e-6)
                assert pdf(t, p) == pytest.approx(ref_f, rel=1e-6)


class TestGrowthIntegralHelpers:
    def test_matches_quadrature(self):
        for alpha in (-1.2, -0.3, 0.0, 0.7):
            for t in (0.5, 2.0):
                ref, _ = quad(lambda u: math.exp(alpha * u), 0.0, t)
                assert growth_integral(alpha, t) == pytest.approx(ref, rel=1e-10)
                if t > 0:
                    assert log_growth_integral(alpha, t) == pytest.approx(math.log(ref), rel=1e-10)

    def test_dalpha_matches_finite_differences(self):
        h = 1e-6
        for alpha in (-1.2, -0.3, 0.0, 1e-8, 0.7):
            for t in (0.5, 2.0, 9.0):
                fd = (growth_integral(alpha + h, t) - growth_integral(alpha - h, t)) / (2 * h)
                assert growth_integral_dalpha(alpha, t) == pytest.approx(fd, rel=1e-5)

    def test_no_overflow_for_large_alpha_t(self):
        assert log_growth_integral(2.0, 500.0) == pytest.approx(1000.0 - math.log(2.0), rel=1e-12)
