"""MH sampler and dense-quadrature oracles on small problems."""

import math

import numpy as np
import pytest

from jointcure.inference import PriorSpec
from jointcure.likelihood import marginal_loglik_subject
from jointcure.model import JointDataset
from jointcure.oracle import (
    ChainConfig,
    OracleError,
    _split_rhat,
    brute_quadrature_marginal,
    mh_sample,
)
from jointcure.simulate import scenario_one, simulate_dataset


class TestChainConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            ChainConfig(n_iter=10, burn_in=10)
        with pytest.raises(ValueError):
            ChainConfig(scale_b=0.0)


class TestDimensionGuard:
    def test_large_problem_rejected(self):
        cfg = scenario_one(n=40, seed=0)
        ds = simulate_dataset(cfg)
        data = JointDataset(subjects=ds.subjects, spec=cfg.spec)
        with pytest.raises(OracleError):
            mh_sample(data, cfg=ChainConfig(n_iter=10, burn_in=0))


class TestSplitRhat:
    def test_stationary_chain_near_one(self):
        rng = np.random.default_rng(0)
        draws = rng.normal(size=(4000, 3))
        assert np.all(_split_rhat(draws) < 1.02)

    def test_drifting_chain_flagged(self):
        drift = np.linspace(0, 5, 4000)[:, None]
        assert _split_rhat(drift)[0] > 1.5


class TestMhOnToy:
    def test_prior_only_target_recovers_prior(self):
        # a subject with no information: posterior of fixed effects = prior
        from jointcure.model import SubjectData, scenario_spec

        subjects = tuple(
            SubjectData(id=i, records=(), observed_time=0.0, event=0, survival_covariates=np.array([0.0]))
            for i in range(2)
        )
        data = JointDataset(subjects=subjects, spec=scenario_spec())
        priors = PriorSpec(tau_beta=1.0, tau_psi=1.0, tau_gamma=1.0, tau_gamma0=1.0, tau_alpha=1.0)
        cfg = ChainConfig(n_iter=30_000, burn_in=5_000, seed=3)
        out = mh_sample(data, priors=priors, cfg=cfg)
        # beta block sits at indices [n*d : n*d+4); prior is N(0, 1)
        fs = out.layout.fixed_start
        beta_draws = out.chi[:, fs:fs + 4]
        se = beta_draws.std(axis=0) / math.sqrt(200.0)  # generous ESS guess
        assert np.all(np.abs(beta_draws.mean(axis=0)) < 4 * np.maximum(se, 0.02))
        assert np.all(np.abs(beta_draws.std(axis=0) - 1.0) < 0.1)

    def test_acceptance_rates_in_band(self):
        cfg_data = scenario_one(n=10, seed=1)
        ds = simulate_dataset(cfg_data)
        data = JointDataset(subjects=ds.subjects, spec=cfg_data.spec)
        out = mh_sample(data, cfg=ChainConfig(n_iter=20_000, burn_in=8_000, seed=5))
        for name, rate in out.acceptance.items():
            assert 0.15 < rate < 0.5, (name, rate)


class TestBruteQuadrature:
    def test_agreement_with_adaptive_quadrature(self):
        cfg = scenario_one(n=10, seed=3)
        ds = simulate_dataset(cfg)
        for subj in ds.subjects[:5]:
            ours = marginal_loglik_subject(subj, cfg.fixed, cfg.re_spec, method="quadrature", nodes=25)
            ref = brute_quadrature_marginal(subj, cfg.fixed, cfg.re_spec, nodes_per_dim=25)
            assert abs(math.exp(ours - ref) - 1.0) < 1e-6

    def test_single_node_matches_laplace(self):
        cfg = scenario_one(n=6, seed=9)
        ds = simulate_dataset(cfg)
        for subj in ds.subjects[:3]:
            la = marginal_loglik_subject(subj, cfg.fixed, cfg.re_spec, method="laplace")
            one = brute_quadrature_marginal(subj, cfg.fixed, cfg.re_spec, nodes_per_dim=1)
            # independent mode/Hessian, so equality holds to FD accuracy
            assert one == pytest.approx(la, abs=1e-5)

    def test_nodes_converge_monotonically(self):
        cfg = scenario_one(n=4, seed=13)
        ds = simulate_dataset(cfg)
        subj = ds.subjects[0]
        vals = [brute_quadrature_marginal(subj, cfg.fixed, cfg.re_spec, nodes_per_dim=k) for k in (3, 7, 15, 25)]
        gaps = [abs(vals[i + 1] - vals[i]) for i in range(len(vals) - 1)]
        assert gaps[0] >= gaps[1] >= gaps[2] or gaps[2] < 1e-12

    def test_dimension_guard(self):
        from jointcure.model import RandomEffectsSpec, SubjectData, scenario_spec

        spec = RandomEffectsSpec(dims=(5,), sigma=np.ones(5), corr=np.eye(5))
        subj = SubjectData(id=0, records=(), observed_time=0.0, event=0, survival_covariates=np.array([0.0]))
        fx = scenario_one(n=1).fixed
        with pytest.raises(OracleError):
            brute_quadrature_marginal(subj, fx, spec, nodes_per_dim=3)


class TestGaussianToyTarget:
    def test_mh_matches_conjugate_posterior(self):
        # prior-only alpha block: N(0, 1/tau_alpha); with tau=1 the chain
        # should reproduce the standard normal in the alpha coordinate
        from jointcure.model import SubjectData, scenario_spec

        subjects = (SubjectData(id=0, records=(), observed_time=0.0, event=0,
                                survival_covariates=np.array([0.0])),)
        data = JointDataset(subjects=subjects, spec=scenario_spec())
        priors = PriorSpec(tau_beta=1.0, tau_psi=1.0, tau_gamma=1.0, tau_gamma0=1.0, tau_alpha=1.0)
        out = mh_sample(data, priors=priors, cfg=ChainConfig(n_iter=40_000, burn_in=10_000, seed=11))
        alpha_draws = out.phi[:, 0]
        assert abs(alpha_draws.mean()) < 3 * alpha_draws.std() / math.sqrt(150.0)
        assert abs(alpha_draws.std() - 1.0) < 0.12
