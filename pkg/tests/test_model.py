"""Joint-model types and subject-level evaluators."""

import math

import numpy as np
import pytest

from jointcure.gompertz import GompertzParams, InvalidParameterError, survival
from jointcure.model import (
    BiomarkerDesign,
    DimensionError,
    FixedEffects,
    JointDataset,
    JointModelSpec,
    LongitudinalRecord,
    RandomEffects,
    RandomEffectsSpec,
    SubjectData,
    longitudinal_linear_predictor,
    scenario_spec,
    subject_cumulative_hazard,
    subject_cure_fraction,
    subject_hazard,
    survival_linear_predictor,
)


def table1_fixed():
    return FixedEffects(
        beta=(np.array([2.50, -0.20, -0.01, 0.10]),),
        psi=np.array([-0.37]),
        gamma_assoc=(np.array([0.68, 0.17]),),
        gamma0=-0.68,
        alpha=-0.65,
    )


def record(time=0.0, count=3, k=0, x=(1.0, 0.0), z=(1.0, 0.0)):
    return LongitudinalRecord(time=time, count=count, biomarker_index=k,
                              fixed_covariates=np.array(x), random_design=np.array(z))


class TestTypes:
    def test_record_validation(self):
        with pytest.raises(InvalidParameterError):
            record(time=-1.0)
        with pytest.raises(InvalidParameterError):
            record(count=-2)
        with pytest.raises(InvalidParameterError):
            record(count=1.5)

    def test_subject_validation(self):
        with pytest.raises(InvalidParameterError):
            SubjectData(id=1, records=(), observed_time=-0.5, event=0, survival_covariates=np.zeros(1))
        with pytest.raises(InvalidParameterError):
            SubjectData(id=1, records=(), observed_time=1.0, event=2, survival_covariates=np.zeros(1))

    def test_re_spec_requires_spd(self):
        with pytest.raises(InvalidParameterError):
            RandomEffectsSpec.intercept_slope(sigma=[0.0, 1e-9], rho=0.0)
        with pytest.raises(InvalidParameterError):
            RandomEffectsSpec.intercept_slope(sigma=[0.5, 0.5], rho=1.0)
        corr = np.array([[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]])
        with pytest.raises(InvalidParameterError):
            RandomEffectsSpec(dims=(3,), sigma=np.ones(3), corr=corr)

    def test_re_spec_matrices(self):
        spec = RandomEffectsSpec.intercept_slope(sigma=[0.25, 0.5], rho=-0.05)
        cov = spec.covariance
        assert cov[0, 0] == pytest.approx(0.0625)
        assert cov[0, 1] == pytest.approx(-0.05 * 0.25 * 0.5)
        assert spec.precision @ cov == pytest.approx(np.eye(2), abs=1e-12)
        assert spec.log_det_covariance == pytest.approx(math.log(np.linalg.det(cov)))

    def test_survival_intercept_rejected(self):
        with pytest.raises(InvalidParameterError):
            JointModelSpec(
                biomarkers=(BiomarkerDesign("y", ("intercept",), ("intercept",)),),
                survival_covariates=("intercept",),
            )

    def test_dataset_checks_dimensions(self):
        spec = scenario_spec()
        bad = SubjectData(id=0, records=(record(x=(1.0, 0.0)),), observed_time=1.0, event=1,
                          survival_covariates=np.array([1.0]))
        with pytest.raises(DimensionError):
            JointDataset(subjects=(bad,), spec=spec)


class TestLinearPredictors:
    def test_zero_coefficients(self):
        fx = FixedEffects(beta=(np.zeros(2),), psi=np.zeros(1), gamma_assoc=(np.zeros(2),), gamma0=0.0, alpha=-1.0)
        assert longitudinal_linear_predictor(record(), fx, RandomEffects.zeros(2)) == 0.0
        assert survival_linear_predictor(np.zeros(1), fx, RandomEffects.zeros(2)) == 0.0

    def test_hand_dot_product(self):
        fx = FixedEffects(beta=(np.array([2.5, -0.2]),), psi=np.zeros(1), gamma_assoc=(np.zeros(2),), gamma0=0.0, alpha=-1.0)
        rec = record(x=(1.0, 0.3), z=(1.0, 0.3))
        assert longitudinal_linear_predictor(rec, fx, RandomEffects.zeros(2)) == pytest.approx(2.44)

    def test_application_shaped_predictor(self):
        # intercept + time + drug with the anxiety posterior means, drug=1, t=1
        fx = FixedEffects(beta=(np.array([2.68, -0.022, 0.034]),), psi=np.zeros(1),
                          gamma_assoc=(np.zeros(2),), gamma0=0.0, alpha=-1.0)
        rec = record(x=(1.0, 1.0, 1.0), z=(1.0, 1.0))
        assert longitudinal_linear_predictor(rec, fx, RandomEffects.zeros(2)) == pytest.approx(2.692)

    def test_survival_predictor_two_biomarkers(self):
        fx = FixedEffects(
            beta=(np.zeros(1), np.zeros(1)),
            psi=np.array([-0.37]),
            gamma_assoc=(np.array([0.919, 0.916]), np.array([0.680, 0.178])),
            gamma0=0.0,
            alpha=-1.0,
        )
        b = RandomEffects(np.array([0.1, -0.05, 0.2, 0.0]))
        assert survival_linear_predictor(np.array([1.0]), fx, b) == pytest.approx(-0.1879)

    def test_survival_predictor_scenario_shape(self):
        fx = table1_fixed()
        b = RandomEffects(np.array([1.0, 1.0]))
        assert survival_linear_predictor(np.array([0.0]), fx, b) == pytest.approx(0.85)

    def test_dimension_mismatch(self):
        fx = table1_fixed()
        with pytest.raises(DimensionError):
            longitudinal_linear_predictor(record(x=(1.0, 0.0)), fx, RandomEffects.zeros(2))
        with pytest.raises(DimensionError):
            survival_linear_predictor(np.zeros(2), fx, RandomEffects.zeros(2))
        with pytest.raises(DimensionError):
            survival_linear_predictor(np.zeros(1), fx, RandomEffects.zeros(3))

    def test_predictor_linearity(self):
        fx = table1_fixed()
        rec = record(x=(1.0, 0.4, 1.0, 0.3), z=(1.0, 0.4))
        b = RandomEffects(np.array([0.2, -0.1]))
        base = longitudinal_linear_predictor(rec, fx, b)
        doubled = LongitudinalRecord(
            time=rec.time, count=rec.count, biomarker_index=0,
            fixed_covariates=2.0 * rec.fixed_covariates, random_design=rec.random_design,
        )
        halved = FixedEffects(beta=(fx.beta[0] / 2.0,), psi=fx.psi, gamma_assoc=fx.gamma_assoc,
                              gamma0=fx.gamma0, alpha=fx.alpha)
        assert longitudinal_linear_predictor(doubled, halved, b) == pytest.approx(base, rel=1e-12)


class TestSubjectHazard:
    def test_boundary(self):
        fx = FixedEffects(beta=(np.zeros(1),), psi=np.zeros(1), gamma_assoc=(np.zeros(1),), gamma0=0.0, alpha=-1.0)
        assert subject_hazard(0.0, fx, 0.0) == pytest.approx(1.0)
        assert subject_cumulative_hazard(0.0, fx, 0.0) == 0.0

    def test_table1_value(self):
        fx = table1_fixed()
        assert subject_hazard(0.9, fx, 0.0) == pytest.approx(math.exp(-0.65 * 0.9 - 0.68), rel=1e-12)
        assert subject_hazard(0.9, fx, 0.0) == pytest.approx(0.2825, abs=5e-4)

    def test_consistency_with_gompertz_survival(self):
        fx = table1_fixed()
        eta = 0.42
        for t in (0.0, 0.7, 3.0):
            s = math.exp(-subject_cumulative_hazard(t, fx, eta))
            ref = survival(t, GompertzParams(alpha=fx.alpha, mu=math.exp(fx.gamma0 + eta)))
            assert s == pytest.approx(ref, abs=1e-12)


class TestSubjectCureFraction:
    def test_table3_values(self):
        fx = FixedEffects(beta=(np.zeros(1),), psi=np.zeros(1), gamma_assoc=(np.zeros(1),),
                          gamma0=-0.680, alpha=-0.659)
        # CBZ-like (eta=0) and LTG-like (eta = psi1) group centers
        assert subject_cure_fraction(fx, 0.0) == pytest.approx(0.4636, abs=2e-4)
        assert subject_cure_fraction(fx, -0.370) == pytest.approx(0.588, abs=1e-3)

    def test_proper_regime_is_zero(self):
        fx = FixedEffects(beta=(np.zeros(1),), psi=np.zeros(1), gamma_assoc=(np.zeros(1),), gamma0=0.0, alpha=0.5)
        assert subject_cure_fraction(fx, -3.0) == 0.0

    def test_decreasing_in_eta(self):
        fx = table1_fixed()
        etas = np.linspace(-2, 2, 41)
        vals = [subject_cure_fraction(fx, e) for e in etas]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_theorem_limit_numerically(self):
        fx = table1_fixed()
        eta = -0.3
        limit = math.exp(-subject_cumulative_hazard(1e6, fx, eta))
        assert limit == pytest.approx(subject_cure_fraction(fx, eta), abs=1e-10)
