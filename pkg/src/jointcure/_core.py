"""Kernel backend selection and the flat array layout both backends share.

The data log-likelihood and its latent derivatives are the hot inner loop of
every fit (they run inside the latent Newton solve, which itself runs inside
the hyperparameter search, which runs once per Monte Carlo replicate).  Two
interchangeable implementations exist:

  - jointcure._kernels     compiled Cython extension
  - jointcure._kernels_py  pure numpy fallback

The compiled backend is used when importable; set JOINTCURE_PURE_PYTHON=1
to force the fallback.  benchmarks/bench_kernels.py compares the two.

Latent fixed-block layout (dimension F = P + Q + D + 1):
    [beta (P) | psi (Q) | gamma (D) | gamma0]
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from . import gompertz
from .model import JointDataset


def _load_backend():
    if os.environ.get("JOINTCURE_PURE_PYTHON"):
        from . import _kernels_py as impl

        return impl, "python"
    try:
        from . import _kernels as impl  # type: ignore[attr-defined]

        return impl, "cython"
    except ImportError:
        from . import _kernels_py as impl

        return impl, "python"


_impl, BACKEND = _load_backend()


def backend() -> str:
    """Name of the active kernel backend: "cython" or "python"."""
    return BACKEND


@dataclass(frozen=True)
class KernelData:
    """Dataset flattened to contiguous arrays.

    Longitudinal design rows are embedded in the full concatenated-beta /
    flat-b coordinate systems (zero outside the record's biomarker block),
    and records are sorted by subject.
    """

    n_subjects: int
    n_beta: int
    n_psi: int
    n_random: int
    rec_subj: np.ndarray      # (N,) int64, nondecreasing
    rec_y: np.ndarray         # (N,) float64 counts
    rec_logyfact: np.ndarray  # (N,) log(y!)
    rec_x: np.ndarray         # (N, P)
    rec_z: np.ndarray         # (N, D)
    surv_w: np.ndarray        # (n, Q)
    surv_t: np.ndarray        # (n,)
    surv_delta: np.ndarray    # (n,) float64 0/1

    @property
    def n_fixed(self) -> int:
        return self.n_beta + self.n_psi + self.n_random + 1

    @classmethod
    def from_dataset(cls, data: JointDataset) -> "KernelData":
        spec = data.spec
        n, p, q, d = data.n_subjects, spec.n_beta, spec.n_psi, spec.n_random
        beta_slices = spec.beta_slices()
        random_slices = spec.random_slices()

        subj_idx, ys, xs, zs = [], [], [], []
        surv_w = np.zeros((n, q))
        surv_t = np.zeros(n)
        surv_delta = np.zeros(n)
        for i, subj in enumerate(data.subjects):
            surv_w[i] = subj.survival_covariates
            surv_t[i] = subj.observed_time
            surv_delta[i] = subj.event
            for rec in subj.records:
                k = rec.biomarker_index
                x_full = np.zeros(p)
                x_full[beta_slices[k]] = rec.fixed_covariates
                z_full = np.zeros(d)
                z_full[random_slices[k]] = rec.random_design
                subj_idx.append(i)
                ys.append(float(rec.count))
                xs.append(x_full)
                zs.append(z_full)

        rec_y = np.asarray(ys, dtype=float)
        return cls(
            n_subjects=n,
            n_beta=p,
            n_psi=q,
            n_random=d,
            rec_subj=np.asarray(subj_idx, dtype=np.int64),
            rec_y=rec_y,
            rec_logyfact=gammaln(rec_y + 1.0),
            rec_x=np.ascontiguousarray(np.asarray(xs, dtype=float).reshape(len(ys), p)),
            rec_z=np.ascontiguousarray(np.asarray(zs, dtype=float).reshape(len(ys), d)),
            surv_w=surv_w,
            surv_t=surv_t,
            surv_delta=surv_delta,
        )


def survival_terms(alpha: float, t: np.ndarray):
    """Per-subject (alpha*t, log integral of exp(alpha*u) du) pair.

    Precomputed once per alpha so the kernels stay free of Gompertz
    branching; log integral is -inf at t = 0, which the kernels turn into a
    zero cumulative hazard.
    """
    t = np.asarray(t, dtype=float)
    return alpha * t, np.asarray(gompertz.log_growth_integral(alpha, t), dtype=float)


def data_loglik(kd, b, beta, psi, gamma, gamma0, alpha_t, log_r) -> float:
    """Data log-likelihood (Poisson products + survival terms), priors excluded."""
    return _impl.data_loglik(kd, b, beta, psi, gamma, gamma0, alpha_t, log_r)


def data_loglik_parts(kd, b, beta, psi, gamma, gamma0, alpha_t, log_r):
    """Value, gradient, and Hessian blocks of the data log-likelihood.

    Returns (ll, grad_b (n,D), grad_f (F,), hbb (n,D,D), hbf (n,D,F),
    hff (F,F)) with the Hessian of the raw log-likelihood (not negated).
    """
    return _impl.data_loglik_parts(kd, b, beta, psi, gamma, gamma0, alpha_t, log_r)
