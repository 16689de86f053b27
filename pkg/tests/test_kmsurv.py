"""Product-limit estimator and plateau extraction."""

import numpy as np
import pytest

from jointcure.kmsurv import KMCurve, kaplan_meier, plateau
from jointcure.simulate import scenario_one, simulate_dataset


class TestKaplanMeier:
    def test_all_censored_flat_at_one(self):
        curve = kaplan_meier([1.0, 2.0, 3.0], [0, 0, 0])[0]
        assert np.array_equal(curve.times, [0.0])
        assert curve.estimates[-1] == 1.0

    def test_hand_product_limit(self):
        curve = kaplan_meier([1, 2, 3, 4, 5], [1, 1, 0, 1, 0])[0]
        by_time = dict(zip(curve.times, curve.estimates))
        assert by_time[1.0] == pytest.approx(0.8)
        assert by_time[2.0] == pytest.approx(0.6)
        assert by_time[4.0] == pytest.approx(0.3)

    def test_no_censoring_reduces_to_empirical_survival(self):
        rng = np.random.default_rng(5)
        times = rng.exponential(size=200)
        curve = kaplan_meier(times, np.ones(200, dtype=int))[0]
        for t, s in zip(curve.times[1:], curve.estimates[1:]):
            assert s == pytest.approx(np.mean(times > t), abs=1e-12)

    def test_tied_events_share_at_risk_count(self):
        # two events and one censoring at t=2: both events use risk set of 4
        curve = kaplan_meier([1, 2, 2, 2, 5], [0, 1, 1, 0, 0])[0]
        by_time = dict(zip(curve.times, curve.estimates))
        assert by_time[2.0] == pytest.approx(1.0 - 2.0 / 4.0)

    def test_ordering_invariance(self):
        rng = np.random.default_rng(11)
        times = rng.exponential(size=100)
        events = rng.integers(0, 2, size=100)
        base = kaplan_meier(times, events)[0]
        perm = rng.permutation(100)
        shuffled = kaplan_meier(times[perm], events[perm])[0]
        assert np.array_equal(base.times, shuffled.times)
        assert np.allclose(base.estimates, shuffled.estimates)

    def test_groups(self):
        curves = kaplan_meier([1, 2, 3, 4], [1, 0, 1, 0], group_labels=["a", "a", "b", "b"])
        assert [c.group for c in curves] == ["a", "b"]
        assert curves[0].estimates[-1] == pytest.approx(0.5)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            kaplan_meier([], [])
        with pytest.raises(ValueError):
            kaplan_meier([-1.0], [1])
        with pytest.raises(ValueError):
            kaplan_meier([1.0], [2])
        with pytest.raises(ValueError):
            kaplan_meier([1.0, 2.0], [1])

    def test_curve_invariant_enforced(self):
        with pytest.raises(ValueError):
            KMCurve(times=[0.0, 1.0], estimates=[0.5, 0.8], at_risk=[2, 1], n_events=[0, 1])


class TestPlateau:
    def test_all_censored(self):
        curve = kaplan_meier([1.0, 2.0], [0, 0])[0]
        p = plateau(curve)
        assert p.value == 1.0 and p.informative

    def test_terminal_event_not_informative(self):
        curve = kaplan_meier([1.0, 2.0, 3.0], [0, 0, 1])[0]
        p = plateau(curve)
        assert p.value == pytest.approx(0.0)
        assert not p.informative

    def test_simulated_cohort_plateau_near_mean_cure(self):
        ds = simulate_dataset(scenario_one(n=5000, seed=31))
        times = np.array([s.observed_time for s in ds.subjects])
        events = np.array([s.event for s in ds.subjects])
        p = plateau(kaplan_meier(times, events)[0])
        assert abs(p.value - ds.cure_prob.mean()) < 0.03
        assert p.informative
