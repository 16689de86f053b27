"""Kernel backends: finite-difference validation and cross-backend parity."""

import importlib

import numpy as np
import pytest

from jointcure import _core
from jointcure._core import KernelData, survival_terms
from jointcure.model import JointDataset
from jointcure.simulate import scenario_one, simulate_dataset

try:
    from jointcure import _kernels  # noqa: F401

    HAVE_COMPILED = True
except ImportError:
    HAVE_COMPILED = False

kernels_py = importlib.import_module("jointcure._kernels_py")


@pytest.fixture(scope="module")
def problem():
    cfg = scenario_one(n=12, seed=3)
    ds = simulate_dataset(cfg)
    data = JointDataset(subjects=ds.subjects, spec=cfg.spec)
    kd = KernelData.from_dataset(data)
    fx = cfg.fixed
    rng = np.random.default_rng(7)
    state = {
        "b": rng.normal(size=(12, 2)) * 0.3,
        "beta": fx.beta_flat + rng.normal(size=4) * 0.05,
        "psi": fx.psi.copy(),
        "gamma": fx.gamma_flat.copy(),
        "gamma0": fx.gamma0,
    }
    at, lr = survival_terms(fx.alpha, kd.surv_t)
    return kd, state, at, lr


def _call(impl, kd, s, at, lr):
    return impl.data_loglik_parts(kd, s["b"], s["beta"], s["psi"], s["gamma"], s["gamma0"], at, lr)


class TestNumpyBackend:
    def test_value_matches_parts(self, problem):
        kd, s, at, lr = problem
        v = kernels_py.data_loglik(kd, s["b"], s["beta"], s["psi"], s["gamma"], s["gamma0"], at, lr)
        ll, *_ = _call(kernels_py, kd, s, at, lr)
        assert v == pytest.approx(ll, rel=1e-14)

    def test_gradients_match_finite_differences(self, problem):
        kd, s, at, lr = problem
        ll, gb, gf, hbb, hbf, hff = _call(kernels_py, kd, s, at, lr)
        h = 1e-6

        def value(b, theta):
            beta, psi, gamma, g0 = theta[:4], theta[4:5], theta[5:7], float(theta[7])
            return kernels_py.data_loglik(kd, b, beta, psi, gamma, g0, at, lr)

        theta0 = np.concatenate([s["beta"], s["psi"], s["gamma"], [s["gamma0"]]])
        for j in range(8):
            tp, tm = theta0.copy(), theta0.copy()
            tp[j] += h
            tm[j] -= h
            fd = (value(s["b"], tp) - value(s["b"], tm)) / (2 * h)
            assert gf[j] == pytest.approx(fd, rel=1e-5, abs=1e-6)
        for i in range(kd.n_subjects):
            for a in range(kd.n_random):
                bp, bm = s["b"].copy(), s["b"].copy()
                bp[i, a] += h
                bm[i, a] -= h
                fd = (value(bp, theta0) - value(bm, theta0)) / (2 * h)
                assert gb[i, a] == pytest.approx(fd, rel=1e-5, abs=1e-6)

    def test_hessian_blocks_match_gradient_differences(self, problem):
        kd, s, at, lr = problem
        _, gb0, gf0, hbb, hbf, hff = _call(kernels_py, kd, s, at, lr)
        h = 1e-6
        theta0 = np.concatenate([s["beta"], s["psi"], s["gamma"], [s["gamma0"]]])

        def grads(b, theta):
            st = dict(s, b=b, beta=theta[:4], psi=theta[4:5], gamma=theta[5:7], gamma0=float(theta[7]))
            _, gb, gf, *_ = _call(kernels_py, kd, st, at, lr)
            return gb, gf

        for j in range(8):
            tp, tm = theta0.copy(), theta0.copy()
            tp[j] += h
            tm[j] -= h
            gbp, gfp = grads(s["b"], tp)
            gbm, gfm = grads(s["b"], tm)
            assert np.allclose((gfp - gfm) / (2 * h), hff[:, j], atol=1e-4)
            assert np.allclose((gbp - gbm) / (2 * h), hbf[:, :, j], atol=1e-4)
        for i in range(kd.n_subjects):
            for a in range(kd.n_random):
                bp, bm = s["b"].copy(), s["b"].copy()
                bp[i, a] += h
                bm[i, a] -= h
                gbp, _ = grads(bp, theta0)
                gbm, _ = grads(bm, theta0)
                assert np.allclose((gbp[i] - gbm[i]) / (2 * h), hbb[i, a], atol=1e-4)


@pytest.mark.skipif(not HAVE_COMPILED, reason="compiled kernel extension not built")
class TestBackendParity:
    def test_values_agree(self, problem):
        kd, s, at, lr = problem
        from jointcure import _kernels

        va = _kernels.data_loglik(kd, s["b"], s["beta"], s["psi"], s["gamma"], s["gamma0"], at, lr)
        vb = kernels_py.data_loglik(kd, s["b"], s["beta"], s["psi"], s["gamma"], s["gamma0"], at, lr)
        assert va == pytest.approx(vb, rel=1e-12)

    def test_all_blocks_agree(self, problem):
        kd, s, at, lr = problem
        from jointcure import _kernels

        out_a = _call(_kernels, kd, s, at, lr)
        out_b = _call(kernels_py, kd, s, at, lr)
        assert out_a[0] == pytest.approx(out_b[0], rel=1e-12)
        for a, b in zip(out_a[1:], out_b[1:]):
            assert np.allclose(a, b, rtol=1e-10, atol=1e-12)

    def test_parity_with_zero_time_subject(self):
        # t = 0 exercises the -inf log-integral branch in both backends
        from jointcure import _kernels
        from jointcure.model import LongitudinalRecord, SubjectData, scenario_spec

        rec = LongitudinalRecord(time=0.0, count=2, biomarker_index=0,
                                 fixed_covariates=np.array([1.0, 0.0, 1.0, 0.2]),
                                 random_design=np.array([1.0, 0.0]))
        subj = SubjectData(id=0, records=(rec,), observed_time=0.0, event=0,
                           survival_covariates=np.array([1.0]))
        data = JointDataset(subjects=(subj,), spec=scenario_spec())
        kd = KernelData.from_dataset(data)
        at, lr = survival_terms(-0.5, kd.surv_t)
        args = (kd, np.zeros((1, 2)), np.array([2.0, -0.1, 0.0, 0.1]), np.array([0.3]),
                np.array([0.4, 0.1]), -0.2, at, lr)
        assert _kernels.data_loglik(*args) == pytest.approx(kernels_py.data_loglik(*args), rel=1e-14)


def test_backend_reports_name():
    assert _core.backend() in ("cython", "python")
