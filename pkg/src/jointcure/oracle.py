"""Slow-but-sure validators: random-walk Metropolis and dense quadrature.

These exist to cross-check the approximate engine on small problems; they
deliberately avoid the compiled kernels and the engine's Newton/Laplace
machinery, recomputing every density from the per-subject definitions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import gammaln, logsumexp, roots_hermite

from . import gompertz
from .inference import HyperParams, LatentLayout, PriorSpec
from .likelihood import conditional_loglik
from .model import FixedEffects, JointDataset, RandomEffectsSpec


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class ChainConfig:
    """Random-walk Metropolis settings."""

    n_iter: int = 200_000
    burn_in: int = 50_000
    scale_b: float = 0.4
    scale_beta: float = 0.05
    scale_psi: float = 0.3
    scale_gamma: float = 0.4
    scale_hyper: float = 0.15
    seed: int = 0
    adapt_window: int = 500
    max_dimension: int = 60

    def __post_init__(self):
        if not self.n_iter > self.burn_in >= 0:
            raise ValueError("need n_iter > burn_in >= 0")
        for name in ("scale_b", "scale_beta", "scale_psi", "scale_gamma", "scale_hyper"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class ChainResult:
    """Post-burn-in draws with acceptance and convergence diagnostics."""

    chi: np.ndarray            # (S, n_lat) latent draws
    phi: np.ndarray            # (S, k) hyper draws
    acceptance: dict           # block name -> post-adaptation acceptance rate
    r_hat: np.ndarray          # split-chain diagnostic per stored coordinate
    layout: LatentLayout

    def latent_mean(self) -> np.ndarray:
        return self.chi.mean(axis=0)

    def latent_sd(self) -> np.ndarray:
        return self.chi.std(axis=0)


class _Target:
    """Plain-python evaluation of the joint log-density, block-updatable."""

    def __init__(self, data: JointDataset, priors: PriorSpec):
        self.spec = data.spec
        self.priors = priors
        self.subjects = data.subjects
        self.n = len(self.subjects)
        self.d = self.spec.n_random
        self.p = self.spec.n_beta
        self.q = self.spec.n_psi
        # per-subject design arrays
        beta_slices = self.spec.beta_slices()
        r_slices = self.spec.random_slices()
        self.sx, self.sz, self.sy = [], [], []
        self.sw = np.zeros((self.n, self.q))
        self.st = np.zeros(self.n)
        self.sdelta = np.zeros(self.n)
        for i, subj in enumerate(self.subjects):
            x = np.zeros((len(subj.records), self.p))
            z = np.zeros((len(subj.records), self.d))
            y = np.zeros(len(subj.records))
            for j, rec in enumerate(subj.records):
                k = rec.biomarker_index
                x[j, beta_slices[k]] = rec.fixed_covariates
                z[j, r_slices[k]] = rec.random_design
                y[j] = rec.count
            self.sx.append(x)
            self.sz.append(z)
            self.sy.append(y)
            self.sw[i] = subj.survival_covariates
            self.st[i] = subj.observed_time
            self.sdelta[i] = subj.event
        self.slogyfact = [gammaln(y + 1.0) for y in self.sy]
        # stacked copies for vectorized whole-cohort evaluation
        self.all_subj = np.concatenate([np.full(len(y), i) for i, y in enumerate(self.sy)]).astype(int)
        self.all_x = np.concatenate(self.sx, axis=0)
        self.all_z = np.concatenate(self.sz, axis=0)
        self.all_y = np.concatenate(self.sy)
        self.all_logyfact = gammaln(self.all_y + 1.0)

    def all_data_loglik(self, b, beta, psi, gamma, gamma0, alpha) -> np.ndarray:
        """Per-subject data log-likelihood vector, vectorized over the cohort."""
        eta = self.all_x @ beta + np.einsum("rd,rd->r", self.all_z, b[self.all_subj])
        lam = np.exp(np.minimum(eta, 700.0))
        per_rec = self.all_y * eta - lam - self.all_logyfact
        out = np.bincount(self.all_subj, weights=per_rec, minlength=self.n).astype(float)
        eta_s = self.sw @ psi + b @ gamma
        log_r = gompertz.log_growth_integral(alpha, self.st)
        with np.errstate(invalid="ignore"):
            big_h = np.exp(np.minimum(gamma0 + eta_s + log_r, 700.0))
        big_h = np.where(self.st > 0, big_h, 0.0)
        out += self.sdelta * (alpha * self.st + gamma0 + eta_s) - big_h
        return out

    def subject_data_loglik(self, i: int, b_i, beta, psi, gamma, gamma0, alpha) -> float:
        eta = self.sx[i] @ beta + self.sz[i] @ b_i
        lam = np.exp(np.minimum(eta, 700.0))
        ll = float(self.sy[i] @ eta - lam.sum() - self.slogyfact[i].sum())
        eta_s = float(self.sw[i] @ psi + b_i @ gamma)
        t = self.st[i]
        log_h = alpha * t + gamma0 + eta_s
        big_h = math.exp(min(gamma0 + eta_s + gompertz.log_growth_integral(alpha, t), 700.0)) if t > 0 else 0.0
        return ll + self.sdelta[i] * log_h - big_h

    def b_logprior(self, b: np.ndarray, re_spec: RandomEffectsSpec) -> float:
        half = np.linalg.solve(re_spec.cholesky, b.T)
        return float(
            -0.5 * b.shape[0] * (self.d * math.log(2.0 * math.pi) + re_spec.log_det_covariance)
            - 0.5 * np.sum(half * half)
        )

    def fixed_logprior(self, beta, psi, gamma0) -> float:
        pr = self.priors
        tau_b = np.broadcast_to(np.asarray(pr.tau_beta, dtype=float), (self.p,))
        tau_p = np.broadcast_to(np.asarray(pr.tau_psi, dtype=float), (self.q,))
        lp = float(np.sum(0.5 * np.log(tau_b / (2 * math.pi)) - 0.5 * tau_b * beta**2))
        lp += float(np.sum(0.5 * np.log(tau_p / (2 * math.pi)) - 0.5 * tau_p * psi**2))
        lp += 0.5 * math.log(pr.tau_gamma0 / (2 * math.pi)) - 0.5 * pr.tau_gamma0 * gamma0**2
        return lp

    def hyper_logprior(self, phi: HyperParams) -> float:
        pr = self.priors
        lp = 0.5 * math.log(pr.tau_alpha / (2 * math.pi)) - 0.5 * pr.tau_alpha * phi.alpha**2
        tau_g = np.broadcast_to(np.asarray(pr.tau_gamma, dtype=float), phi.gamma.shape)
        lp += float(np.sum(0.5 * np.log(tau_g / (2 * math.pi)) - 0.5 * tau_g * phi.gamma**2))
        sigma = np.exp(phi.log_sigma)
        lp += float(
            np.sum(0.5 * math.log(2.0 / (math.pi * pr.sigma_scale**2)) - 0.5 * (sigma / pr.sigma_scale) ** 2 + phi.log_sigma)
        )
        if np.any(np.abs(phi.z_rho) >= pr.z_rho_bound):
            return -math.inf
        lp += -len(phi.z_rho) * math.log(2.0 * pr.z_rho_bound)
        return lp


def mh_sample(data: JointDataset, priors: PriorSpec | None = None, cfg: ChainConfig | None = None) -> ChainResult:
    """Blockwise random-walk Metropolis over (chi, phi).

    Blocks: each subject's b_i, then beta, psi, gamma0, and the hyper vector
    (alpha, gamma, log sigma, z rho).  Proposal scales adapt toward a 0.3
    acceptance rate during burn-in and freeze afterwards.
    """
    priors = priors or PriorSpec()
    cfg = cfg or ChainConfig()
    spec = data.spec
    d, p, q = spec.n_random, spec.n_beta, spec.n_psi
    n = data.n_subjects
    k_hyper = 1 + 2 * d + d * (d - 1) // 2
    total_dim = n * d + p + q + 1 + k_hyper
    if total_dim > cfg.max_dimension:
        raise OracleError(
            f"problem dimension {total_dim} exceeds the oracle guard ({cfg.max_dimension}); "
            "the sampler is meant for small cross-checks only"
        )

    target = _Target(data, priors)
    rng = np.random.default_rng(cfg.seed)

    b = np.zeros((n, d))
    beta = np.zeros(p)
    psi = np.zeros(q)
    gamma0 = 0.0
    phi_v = np.concatenate([[0.0], np.zeros(d), np.full(d, math.log(0.5)), np.zeros(d * (d - 1) // 2)])

    def phi_of(v):
        return HyperParams.from_vector(v, d)

    phi = phi_of(phi_v)
    re_spec = phi.re_spec(spec.random_dims)

    subj_ll = np.array(
        [target.subject_data_loglik(i, b[i], beta, psi, phi.gamma, gamma0, phi.alpha) for i in range(n)]
    )

    blocks = ["b", "beta", "psi", "gamma0", "hyper"]
    scales = {
        "b": cfg.scale_b,
        "beta": cfg.scale_beta,
        "psi": cfg.scale_psi,
        "gamma0": cfg.scale_psi,
        "hyper": cfg.scale_hyper,
    }
    accepted = {name: 0 for name in blocks}
    proposed = {name: 0 for name in blocks}

    n_keep = cfg.n_iter - cfg.burn_in
    stored_chi = np.empty((n_keep, n * d + p + q + 1))
    stored_phi = np.empty((n_keep, k_hyper))

    for it in range(cfg.n_iter):
        # subject blocks: only subject i's terms move
        for i in range(n):
            prop = b[i] + rng.normal(0.0, scales["b"], size=d)
            curr_prior = target.b_logprior(b[i][None, :], re_spec)
            prop_prior = target.b_logprior(prop[None, :], re_spec)
            prop_ll = target.subject_data_loglik(i, prop, beta, psi, phi.gamma, gamma0, phi.alpha)
            log_ratio = (prop_ll + prop_prior) - (subj_ll[i] + curr_prior)
            proposed["b"] += 1
            if math.log(rng.uniform()) < log_ratio:
                b[i] = prop
                subj_ll[i] = prop_ll
                accepted["b"] += 1

        # fixed-effect blocks: full data term moves
        curr_total = float(subj_ll.sum())
        for name in ("beta", "psi", "gamma0"):
            if name == "beta":
                prop_beta = beta + rng.normal(0.0, scales["beta"], size=p)
                prop_psi, prop_g0 = psi, gamma0
            elif name == "psi":
                if q == 0:
                    continue
                prop_psi = psi + rng.normal(0.0, scales["psi"], size=q)
                prop_beta, prop_g0 = beta, gamma0
            else:
                prop_g0 = gamma0 + rng.normal(0.0, scales["gamma0"])
                prop_beta, prop_psi = beta, psi
            new_subj = target.all_data_loglik(b, prop_beta, prop_psi, phi.gamma, prop_g0, phi.alpha)
            log_ratio = (
                new_subj.sum() + target.fixed_logprior(prop_beta, prop_psi, prop_g0)
                - curr_total - target.fixed_logprior(beta, psi, gamma0)
            )
            proposed[name] += 1
            if math.log(rng.uniform()) < log_ratio:
                beta, psi, gamma0 = prop_beta, prop_psi, prop_g0
                subj_ll = new_subj
                curr_total = float(subj_ll.sum())
                accepted[name] += 1

        # hyper block: data terms and b prior both move
        prop_v = phi_v + rng.normal(0.0, scales["hyper"], size=k_hyper)
        prop_phi = phi_of(prop_v)
        prop_prior = target.hyper_logprior(prop_phi)
        proposed["hyper"] += 1
        if math.isfinite(prop_prior):
            try:
                prop_re = prop_phi.re_spec(spec.random_dims)
            except Exception:
                prop_re = None
            if prop_re is not None:
                new_subj = target.all_data_loglik(b, beta, psi, prop_phi.gamma, gamma0, prop_phi.alpha)
                log_ratio = (
                    new_subj.sum() + target.b_logprior(b, prop_re) + prop_prior
                    - curr_total - target.b_logprior(b, re_spec) - target.hyper_logprior(phi)
                )
                if math.isfinite(log_ratio) and math.log(rng.uniform()) < log_ratio:
                    phi_v, phi, re_spec = prop_v, prop_phi, prop_re
                    subj_ll = new_subj
                    accepted["hyper"] += 1

        # adaptation toward 0.3 acceptance, burn-in only
        if it < cfg.burn_in and (it + 1) % cfg.adapt_window == 0:
            for name in blocks:
                if proposed[name] == 0:
                    continue
                rate = accepted[name] / proposed[name]
                scales[name] *= math.exp(1.2 * (rate - 0.3))
                accepted[name] = 0
                proposed[name] = 0

        if it >= cfg.burn_in:
            j = it - cfg.burn_in
            stored_chi[j] = np.concatenate([b.ravel(), beta, psi, [gamma0]])
            stored_phi[j] = phi_v

        if not np.all(np.isfinite(subj_ll)):
            raise OracleError(f"non-finite log-likelihood at iteration {it}; state: beta={beta}, phi={phi_v}")

    acceptance = {name: (accepted[name] / proposed[name] if proposed[name] else 0.0) for name in blocks}
    layout = LatentLayout(n_subjects=n, n_random=d, n_beta=p, n_psi=q)
    stacked = np.concatenate([stored_chi, stored_phi], axis=1)
    return ChainResult(
        chi=stored_chi,
        phi=stored_phi,
        acceptance=acceptance,
        r_hat=_split_rhat(stacked),
        layout=layout,
    )


def _split_rhat(draws: np.ndarray) -> np.ndarray:
    """Split-chain potential scale reduction factor per coordinate."""
    s = draws.shape[0] // 2
    a, c = draws[:s], draws[s:2 * s]
    means = np.stack([a.mean(axis=0), c.mean(axis=0)])
    vars_ = np.stack([a.var(axis=0, ddof=1), c.var(axis=0, ddof=1)])
    w = vars_.mean(axis=0)
    b_var = s * means.var(axis=0, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.sqrt(((s - 1) / s * w + b_var / s) / w)
    return np.where(w > 0, out, 1.0)


# ---------------------------------------------------------------------------
# dense quadrature reference for the subject marginal


def brute_quadrature_marginal(
    subject,
    fx: FixedEffects,
    spec: RandomEffectsSpec,
    nodes_per_dim: int = 25,
) -> float:
    """Tensor-product Gauss-Hermite value of one subject's marginal likelihood.

    Centered and scaled at a mode found by a generic optimizer with a
    finite-difference Hessian, so it shares no machinery with the Laplace
    path it validates.  Dimension is guarded at 4.
    """
    d = spec.total_dim
    if d > 4:
        raise OracleError(f"random-effect dimension {d} exceeds the quadrature guard (4)")

    def neg_obj(b):
        return -conditional_loglik(subject, fx, spec, b).total

    res = minimize(neg_obj, np.zeros(d), method="BFGS")
    mode = res.x
    hess = _fd_hessian(neg_obj, mode)
    cov = np.linalg.inv(0.5 * (hess + hess.T))
    cov_chol = np.linalg.cholesky(cov)

    z1, w1 = roots_hermite(nodes_per_dim)
    grids = np.meshgrid(*([z1] * d), indexing="ij")
    z = np.stack([g.ravel() for g in grids], axis=1)
    wg = np.meshgrid(*([np.log(w1)] * d), indexing="ij")
    logw = np.sum(np.stack([g.ravel() for g in wg], axis=1), axis=1)
    pts = mode[None, :] + math.sqrt(2.0) * z @ cov_chol.T
    vals = np.array([-neg_obj(pt) for pt in pts])
    _, logdet_cov = np.linalg.slogdet(cov)
    return float(logsumexp(vals + np.sum(z * z, axis=1) + logw) + 0.5 * d * math.log(2.0) + 0.5 * logdet_cov)


def _fd_hessian(f, x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    k = len(x)
    h = step * np.maximum(1.0, np.abs(x))
    out = np.zeros((k, k))
    f0 = f(x)
    fp = np.zeros(k)
    fm = np.zeros(k)
    for i in range(k):
        e = np.zeros(k)
        e[i] = h[i]
        fp[i] = f(x + e)
        fm[i] = f(x - e)
        out[i, i] = (fp[i] - 2.0 * f0 + fm[i]) / h[i] ** 2
    for i in range(k):
        for j in range(i + 1, k):
            ei, ej = np.zeros(k), np.zeros(k)
            ei[i] = h[i]
            ej[j] = h[j]
            out[i, j] = out[j, i] = (f(x + ei + ej) - fp[i] - fp[j] + 2.0 * f0 - fm[i] - fm[j] + f(x - ei - ej)) / (
                2.0 * h[i] * h[j]
            )
    return out
