"""Approximate Bayesian engine in the nested-Laplace style.

The unknowns split into a Gaussian layer and a hyperparameter layer:

  latent field  chi = (b_1..b_n, beta, psi, gamma0), Gaussian priors;
  hyperparams   phi = (alpha, gamma, log sigma, atanh rho): baseline shape,
                association coefficients, random-effects covariance.

Association coefficients live in the hyperparameter layer, not the latent
field: conditional on gamma the latent log-density is strictly concave
(every data term is concave in a linear predictor), so the inner Newton has
a unique mode and the Laplace step is well behaved.  With gamma latent the
b'gamma bilinearity gives the joint density a divergent spurious mode, the
same reason production latent-Gaussian software estimates such scalings in
the hyperparameter layer ("copy" mechanism).

Fitting proceeds in the classic three steps: (1) for each phi, locate the
latent mode by Newton iterations and Laplace-approximate the hyperparameter
posterior; (2) approximate the conditional latent posterior by the Gaussian
at that mode; (3) integrate over a small grid of phi points placed along the
standardized eigen-axes of the hyper posterior, keeping points whose
log-density is within a fixed drop of the mode.

Latent marginals are therefore weighted Gaussian mixtures; derived
quantities (cure fractions, hazard ratios) come from joint posterior draws.
All negative-Hessian algebra exploits the block structure (one small block
per subject coupled only to the fixed-effect block) via a Schur complement.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm

from . import _core
from .likelihood import ModeNotFoundError
from .model import (
    InvalidParameterError,
    JointDataset,
    JointModelSpec,
    RandomEffectsSpec,
)


class InferenceError(RuntimeError):
    """The engine could not produce a usable posterior approximation."""


# ---------------------------------------------------------------------------
# parameter layers


@dataclass(frozen=True)
class PriorSpec:
    """Weakly-informative defaults: precision 0.01 (SD 10) on every fixed
    effect and on the baseline shape, half-Normal(0, 10) on random-effect
    SDs, flat on atanh-correlations over (-4, 4).

    The tau_* fields accept scalars or per-coordinate arrays.
    """

    tau_beta: object = 0.01
    tau_psi: object = 0.01
    tau_gamma: object = 0.01
    tau_gamma0: float = 0.01
    tau_alpha: float = 0.01
    sigma_scale: float = 10.0
    z_rho_bound: float = 4.0

    def fixed_precisions(self, spec: JointModelSpec) -> np.ndarray:
        """Prior precision of each latent fixed-block coordinate."""
        parts = [
            np.broadcast_to(np.asarray(self.tau_beta, dtype=float), (spec.n_beta,)),
            np.broadcast_to(np.asarray(self.tau_psi, dtype=float), (spec.n_psi,)),
            np.asarray([self.tau_gamma0], dtype=float),
        ]
        out = np.concatenate(parts)
        if np.any(out <= 0.0):
            raise InvalidParameterError("prior precisions must be positive")
        return out


@dataclass(frozen=True)
class HyperParams:
    """Baseline shape, association coefficients, and the random-effects
    covariance in free coordinates."""

    alpha: float
    gamma: np.ndarray
    log_sigma: np.ndarray
    z_rho: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gamma", np.atleast_1d(np.asarray(self.gamma, dtype=float)))
        object.__setattr__(self, "log_sigma", np.atleast_1d(np.asarray(self.log_sigma, dtype=float)))
        object.__setattr__(self, "z_rho", np.atleast_1d(np.asarray(self.z_rho, dtype=float)) if np.size(self.z_rho) else np.empty(0))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([[self.alpha], self.gamma, self.log_sigma, self.z_rho])

    @classmethod
    def from_vector(cls, v: np.ndarray, d: int) -> "HyperParams":
        v = np.asarray(v, dtype=float)
        return cls(alpha=float(v[0]), gamma=v[1:1 + d], log_sigma=v[1 + d:1 + 2 * d], z_rho=v[1 + 2 * d:])

    def re_spec(self, dims) -> RandomEffectsSpec:
        """Back-transform to an SPD covariance spec; raises if it is not SPD."""
        d = sum(dims)
        sigma = np.exp(self.log_sigma)
        corr = np.eye(d)
        for (i, j), z in zip(itertools.combinations(range(d), 2), self.z_rho):
            corr[i, j] = corr[j, i] = math.tanh(z)
        return RandomEffectsSpec(dims=tuple(dims), sigma=sigma, corr=corr)


def hyper_dimension(spec: JointModelSpec) -> int:
    d = spec.n_random
    return 1 + 2 * d + d * (d - 1) // 2


def hyper_labels(spec: JointModelSpec) -> list[str]:
    re_labels = spec.random_labels()
    labels = ["alpha"]
    labels += [f"gamma_{lbl.replace('.', '_')}" for lbl in re_labels]
    labels += [f"sigma_{lbl.replace('.', '_')}" for lbl in re_labels]
    labels += [f"rho_{re_labels[i]}_{re_labels[j]}" for i, j in itertools.combinations(range(len(re_labels)), 2)]
    return labels


# ---------------------------------------------------------------------------
# latent field layout


@dataclass(frozen=True)
class LatentLayout:
    """Index map of the flat latent vector: subject blocks then fixed block."""

    n_subjects: int
    n_random: int
    n_beta: int
    n_psi: int

    @property
    def n_fixed(self) -> int:
        return self.n_beta + self.n_psi + 1

    @property
    def total(self) -> int:
        return self.n_subjects * self.n_random + self.n_fixed

    @property
    def fixed_start(self) -> int:
        return self.n_subjects * self.n_random

    def split(self, chi: np.ndarray):
        """(b matrix view, fixed block view) of a flat latent vector."""
        fs = self.fixed_start
        b = chi[:fs].reshape(self.n_subjects, self.n_random)
        return b, chi[fs:]

    def fixed_slices(self):
        p, q = self.n_beta, self.n_psi
        return slice(0, p), slice(p, p + q), p + q


def latent_fixed_labels(spec: JointModelSpec) -> list[str]:
    labels = [f"beta_{bm.name}_{tok}" for bm in spec.biomarkers for tok in bm.fixed]
    labels += [f"psi_{c}" for c in spec.survival_covariates]
    labels += ["gamma0"]
    return labels


@dataclass(frozen=True)
class LatentField:
    """A point in the latent space with named access to its blocks."""

    vector: np.ndarray
    layout: LatentLayout

    def __post_init__(self):
        object.__setattr__(self, "vector", np.asarray(self.vector, dtype=float))
        if len(self.vector) != self.layout.total:
            raise InvalidParameterError(
                f"latent vector has length {len(self.vector)}, layout needs {self.layout.total}"
            )

    @property
    def b(self) -> np.ndarray:
        return self.layout.split(self.vector)[0]

    @property
    def fixed(self) -> np.ndarray:
        return self.layout.split(self.vector)[1]

    @property
    def beta(self) -> np.ndarray:
        return self.fixed[self.layout.fixed_slices()[0]]

    @property
    def psi(self) -> np.ndarray:
        return self.fixed[self.layout.fixed_slices()[1]]

    @property
    def gamma0(self) -> float:
        return float(self.fixed[self.layout.fixed_slices()[2]])


# ---------------------------------------------------------------------------
# block factorization of the negative Hessian


class BlockFactor:
    """Cholesky of [[A, B], [B', C]] with A block-diagonal over subjects.

    A: (n, d, d), B: (n, d, F), C: (F, F).  Supports solves, log-determinant,
    marginal variances and exact Gaussian sampling.
    """

    def __init__(self, a: np.ndarray, b: np.ndarray, c: np.ndarray):
        self.a, self.b = a, b
        self.chol_a = np.linalg.cholesky(a)
        self.u = np.linalg.solve(a, b)                      # A^{-1} B
        s = c - np.einsum("ndf,ndg->fg", b, self.u)
        s = 0.5 * (s + s.T)
        self.chol_s = np.linalg.cholesky(s)

    @property
    def logdet(self) -> float:
        return float(
            2.0 * np.sum(np.log(np.diagonal(self.chol_a, axis1=1, axis2=2)))
            + 2.0 * np.sum(np.log(np.diag(self.chol_s)))
        )

    def _solve_s(self, rhs: np.ndarray) -> np.ndarray:
        y = np.linalg.solve(self.chol_s, rhs)
        return np.linalg.solve(self.chol_s.T, y)

    def solve(self, g_b: np.ndarray, g_f: np.ndarray):
        """Solve the full system for (x_b, x_f)."""
        t = np.linalg.solve(self.a, g_b[:, :, None])[:, :, 0]
        x_f = self._solve_s(g_f - np.einsum("ndf,nd->f", self.b, t))
        x_b = t - np.einsum("ndf,f->nd", self.u, x_f)
        return x_b, x_f

    def marginal_variances(self):
        """Diagonal of the inverse, split as ((n, d) for b, (F,) for fixed)."""
        f = self.b.shape[2]
        s_inv = self._solve_s(np.eye(f))
        var_f = np.diag(s_inv).copy()
        a_inv_diag = np.diagonal(np.linalg.inv(self.a), axis1=1, axis2=2)
        corr = np.einsum("ndf,fg,ndg->nd", self.u, s_inv, self.u)
        return a_inv_diag + corr, var_f

    def sample(self, mean_b: np.ndarray, mean_f: np.ndarray, rng: np.random.Generator, size: int):
        """Draws from N(mean, [[A,B],[B',C]]^{-1}); returns (size, n, d) and (size, F)."""
        n, d = mean_b.shape
        f = len(mean_f)
        z_f = rng.standard_normal((size, f))
        x_f = mean_f[None, :] + np.linalg.solve(self.chol_s.T, z_f.T).T
        z_b = rng.standard_normal((size, n, d))
        noise_b = np.einsum("nde,sne->snd", np.linalg.inv(np.transpose(self.chol_a, (0, 2, 1))), z_b)
        x_b = mean_b[None] - np.einsum("ndf,sf->snd", self.u, x_f - mean_f[None, :]) + noise_b
        return x_b, x_f


# ---------------------------------------------------------------------------
# engine


@dataclass(frozen=True)
class FitConfig:
    """Numerical knobs of the engine; defaults keep desk-scale runs in minutes."""

    newton_tol: float = 1e-6
    newton_max_iter: int = 100
    grid_delta: float = 2.5
    grid_step: float = 1.0
    grid_max_axis_steps: int = 3
    grid_max_points: int = 81
    profile_drop: float = 8.0
    profile_max_steps: int = 10
    hyper_max_iter: int = 200
    hyper_fd_eps: float = 1e-4
    hessian_fd_step: float = 1e-3
    n_draws: int = 1000
    alpha_bounds: tuple = (None, None)
    log_sigma_bounds: tuple = (-7.0, 4.0)
    quantile_tol: float = 1e-6


@dataclass(frozen=True)
class ModeResult:
    chi: np.ndarray
    value: float            # log_joint at the mode
    factor: BlockFactor
    n_iter: int
    grad_norm: float


@dataclass(frozen=True)
class IntegrationGrid:
    """Hyper-grid points with log-densities and area weights.

    Point 0 is the hyper mode; phi_cov is the Laplace covariance there,
    used for hyperparameter summaries.
    """

    points: np.ndarray      # (H, k)
    log_dens: np.ndarray    # (H,)
    weights: np.ndarray     # (H,) positive area weights
    mode_phi: np.ndarray    # (k,)
    phi_cov: np.ndarray     # (k, k)

    def __post_init__(self):
        if np.any(self.weights <= 0.0):
            raise InvalidParameterError("grid weights must be positive")

    @property
    def n_points(self) -> int:
        return len(self.log_dens)

    @property
    def posterior_weights(self) -> np.ndarray:
        """Normalized mass of each grid point (sums to 1)."""
        w = np.exp(self.log_dens - self.log_dens.max()) * self.weights
        return w / w.sum()


@dataclass(frozen=True)
class LatentMarginals:
    """Per-coordinate Gaussian mixtures over the hyper grid."""

    means: np.ndarray       # (H, n_lat)
    sds: np.ndarray         # (H, n_lat)
    weights: np.ndarray     # (H,)
    layout: LatentLayout
    quantile_tol: float = 1e-6

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def sd(self) -> np.ndarray:
        m = self.mean()
        second = self.weights @ (self.sds**2 + self.means**2)
        return np.sqrt(np.maximum(second - m**2, 0.0))

    def cdf(self, x: np.ndarray) -> np.ndarray:
        return np.einsum("h,hj->j", self.weights, norm.cdf((x[None, :] - self.means) / self.sds))

    def quantile(self, q: float) -> np.ndarray:
        """Equal-tailed quantiles by bisection on the mixture CDF."""
        lo = (self.means - 10.0 * self.sds).min(axis=0)
        hi = (self.means + 10.0 * self.sds).max(axis=0)
        scale = np.maximum(self.sd(), 1e-12)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            below = self.cdf(mid) < q
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo < self.quantile_tol * np.maximum(1.0, scale)):
                break
        return 0.5 * (lo + hi)


@dataclass(frozen=True)
class ParameterSummary:
    name: str
    mean: float
    sd: float
    q025: float
    q975: float

    def __post_init__(self):
        if not self.q025 < self.q975:
            raise InferenceError(f"{self.name}: lower quantile {self.q025} not below upper {self.q975}")

    def contains(self, value: float) -> bool:
        return self.q025 <= value <= self.q975


@dataclass(frozen=True)
class PosteriorSummary:
    """Full report: parameter table plus derived cure/hazard quantities."""

    parameters: tuple
    cure_ids: tuple
    cure_mean: np.ndarray
    cure_lo: np.ndarray
    cure_hi: np.ndarray
    cure_group: tuple
    group_cure: dict
    hazard_ratios: tuple

    def parameter(self, name: str) -> ParameterSummary:
        for p in self.parameters:
            if p.name == name:
                return p
        raise KeyError(name)

    @property
    def names(self) -> list:
        return [p.name for p in self.parameters]


@dataclass(frozen=True)
class PosteriorDraws:
    chi: np.ndarray         # (S, n_lat)
    phi: np.ndarray         # (S, k)
    layout: LatentLayout


class InlaEngine:
    """Holds the prepared dataset and runs the three approximation steps."""

    def __init__(self, data: JointDataset, priors: PriorSpec | None = None, config: FitConfig | None = None):
        self.data = data
        self.spec = data.spec
        self.priors = priors or PriorSpec()
        self.config = config or FitConfig()
        self.kd = _core.KernelData.from_dataset(data)
        self.layout = LatentLayout(
            n_subjects=self.kd.n_subjects,
            n_random=self.kd.n_random,
            n_beta=self.kd.n_beta,
            n_psi=self.kd.n_psi,
        )
        self.prior_prec_fixed = self.priors.fixed_precisions(self.spec)
        self._mode_cache: dict = {}

    # -- priors ------------------------------------------------------------

    def hyper_log_prior(self, phi: HyperParams) -> float:
        pr = self.priors
        lp = -0.5 * pr.tau_alpha * phi.alpha**2 + 0.5 * math.log(pr.tau_alpha / (2.0 * math.pi))
        tau_g = np.broadcast_to(np.asarray(pr.tau_gamma, dtype=float), phi.gamma.shape)
        lp += float(np.sum(-0.5 * tau_g * phi.gamma**2 + 0.5 * np.log(tau_g / (2.0 * math.pi))))
        sigma = np.exp(phi.log_sigma)
        # half-Normal(0, sigma_scale) density plus the log-transform Jacobian
        lp += float(
            np.sum(
                0.5 * math.log(2.0 / (math.pi * pr.sigma_scale**2))
                - 0.5 * (sigma / pr.sigma_scale) ** 2
                + phi.log_sigma
            )
        )
        if np.any(np.abs(phi.z_rho) >= pr.z_rho_bound):
            return -math.inf
        lp += -len(phi.z_rho) * math.log(2.0 * pr.z_rho_bound)
        return lp

    def _latent_prior_parts(self, b: np.ndarray, fixed: np.ndarray, re_spec: RandomEffectsSpec):
        """Value and gradient pieces of log pi(chi | phi)."""
        n, d = b.shape
        q_b = re_spec.precision
        quad_b = float(np.einsum("nd,de,ne->", b, q_b, b))
        val = -0.5 * n * d * math.log(2.0 * math.pi) - 0.5 * n * re_spec.log_det_covariance - 0.5 * quad_b
        tau = self.prior_prec_fixed
        val += float(-0.5 * len(fixed) * math.log(2.0 * math.pi) + 0.5 * np.sum(np.log(tau)) - 0.5 * np.sum(tau * fixed**2))
        grad_b = -b @ q_b
        grad_f = -tau * fixed
        return val, grad_b, grad_f, q_b

    # -- joint density and Newton mode --------------------------------------

    def _kernel_fixed_index(self) -> np.ndarray:
        # Kernel fixed layout is [beta, psi, gamma, gamma0]; gamma is a
        # hyperparameter here, so select the remaining coordinates.
        p, q, d = self.kd.n_beta, self.kd.n_psi, self.kd.n_random
        return np.concatenate([np.arange(p + q), [p + q + d]])

    def _chi_parts(self, chi: np.ndarray, phi: HyperParams, re_spec: RandomEffectsSpec):
        """log pi(chi|phi) + log pi(D|chi,phi) with gradient and negative Hessian blocks."""
        b, fixed = self.layout.split(chi)
        sb, sp, ig0 = self.layout.fixed_slices()
        alpha_t, log_r = _core.survival_terms(phi.alpha, self.kd.surv_t)
        ll, gb, gf, hbb, hbf, hff = _core.data_loglik_parts(
            self.kd, np.ascontiguousarray(b), fixed[sb].copy(), fixed[sp].copy(),
            phi.gamma.copy(), float(fixed[ig0]), alpha_t, log_r,
        )
        idx = self._kernel_fixed_index()
        gf = gf[idx]
        hbf = hbf[:, :, idx]
        hff = hff[np.ix_(idx, idx)]
        pval, pgb, pgf, q_b = self._latent_prior_parts(b, fixed, re_spec)
        value = ll + pval
        grad_b = gb + pgb
        grad_f = gf + pgf
        neg_a = -hbb + q_b[None, :, :]
        neg_b = -hbf
        neg_c = -hff + np.diag(self.prior_prec_fixed)
        return value, grad_b, grad_f, neg_a, neg_b, neg_c

    def _chi_value(self, chi: np.ndarray, phi: HyperParams, re_spec: RandomEffectsSpec) -> float:
        b, fixed = self.layout.split(chi)
        sb, sp, ig0 = self.layout.fixed_slices()
        alpha_t, log_r = _core.survival_terms(phi.alpha, self.kd.surv_t)
        ll = _core.data_loglik(
            self.kd, np.ascontiguousarray(b), fixed[sb].copy(), fixed[sp].copy(),
            phi.gamma.copy(), float(fixed[ig0]), alpha_t, log_r,
        )
        return ll + self._latent_prior_parts(b, fixed, re_spec)[0]

    def log_joint(self, chi, phi: HyperParams) -> float:
        """log pi(phi) + log pi(chi|phi) + sum_i log pi(D_i|chi_i, phi)."""
        if isinstance(chi, LatentField):
            chi = chi.vector
        lp = self.hyper_log_prior(phi)
        if not math.isfinite(lp):
            return -math.inf
        re_spec = phi.re_spec(self.spec.random_dims)
        value = self._chi_value(np.asarray(chi, dtype=float), phi, re_spec)
        if not math.isfinite(value):
            raise InferenceError("log_joint is not finite at the requested point")
        return lp + value

    @staticmethod
    def _factor_with_ridge(neg_a, neg_b, neg_c):
        # Away from the mode the bilinear b-gamma coupling can make the full
        # matrix indefinite; a diagonal ridge large enough always wins because
        # the Schur correction shrinks like 1/ridge.
        ridge = 0.0
        scale = max(float(np.max(np.abs(neg_a))), float(np.max(np.abs(neg_c))), 1.0)
        d, f = neg_a.shape[1], neg_c.shape[0]
        for _ in range(22):
            try:
                return BlockFactor(
                    neg_a + ridge * np.eye(d)[None], neg_b, neg_c + ridge * np.eye(f)
                ), ridge
            except np.linalg.LinAlgError:
                ridge = max(10.0 * ridge, 1e-8 * scale)
        raise ModeNotFoundError("negative Hessian could not be factorized even with ridging")

    def latent_mode(self, phi: HyperParams, x0: np.ndarray | None = None) -> ModeResult:
        """Newton-maximize the latent joint density at fixed hyperparameters."""
        cfg = self.config
        re_spec = phi.re_spec(self.spec.random_dims)
        chi = np.zeros(self.layout.total) if x0 is None else np.asarray(x0, dtype=float).copy()
        value, gb, gf, na, nb, nc = self._chi_parts(chi, phi, re_spec)
        if not math.isfinite(value):
            chi = np.zeros(self.layout.total)
            value, gb, gf, na, nb, nc = self._chi_parts(chi, phi, re_spec)
        best = (chi.copy(), value, math.inf)
        for it in range(cfg.newton_max_iter):
            grad_norm = max(float(np.max(np.abs(gb))) if gb.size else 0.0, float(np.max(np.abs(gf))))
            if grad_norm < cfg.newton_tol:
                factor, ridge = self._factor_with_ridge(na, nb, nc)
                if ridge > 0.0:
                    raise ModeNotFoundError(
                        "negative Hessian is not positive definite at the latent mode", best=best
                    )
                lp = self.hyper_log_prior(phi)
                return ModeResult(chi=chi, value=value + lp, factor=factor, n_iter=it, grad_norm=grad_norm)
            factor, _ = self._factor_with_ridge(na, nb, nc)
            db, df = factor.solve(gb, gf)
            step = np.concatenate([db.ravel(), df])
            scale = 1.0
            for _ in range(40):
                cand = chi + scale * step
                cand_val = self._chi_value(cand, phi, re_spec)
                if math.isfinite(cand_val) and cand_val >= value - 1e-10 * (1.0 + abs(value)):
                    break
                scale *= 0.5
            else:
                raise ModeNotFoundError("latent Newton line search failed", best=best)
            chi = cand
            value, gb, gf, na, nb, nc = self._chi_parts(chi, phi, re_spec)
            if value > best[1]:
                best = (chi.copy(), value, grad_norm)
        raise ModeNotFoundError(
            f"latent Newton did not converge in {cfg.newton_max_iter} iterations "
            f"(best value {best[1]:.6g}, last gradient max-norm {best[2]:.3e})",
            best=best,
        )

    def log_marginal_hyper(self, phi: HyperParams, x0: np.ndarray | None = None):
        """Laplace-approximated log pi(phi | D) up to a constant; returns (value, ModeResult)."""
        lp = self.hyper_log_prior(phi)
        if not math.isfinite(lp):
            return -math.inf, None
        mode = self.latent_mode(phi, x0=x0)
        value = mode.value + 0.5 * self.layout.total * math.log(2.0 * math.pi) - 0.5 * mode.factor.logdet
        return float(value), mode

    # -- hyper exploration ---------------------------------------------------

    def _hyper_vector_start(self) -> np.ndarray:
        d = self.spec.n_random
        x0 = np.concatenate([[0.0], np.zeros(d), np.full(d, math.log(0.5)), np.zeros(d * (d - 1) // 2)])
        lb, ub = self.config.alpha_bounds
        if lb is not None:
            x0[0] = max(x0[0], lb + 1e-3)
        if ub is not None:
            x0[0] = min(x0[0], ub - 1e-3)
        return x0

    def _hyper_bounds(self):
        d = self.spec.n_random
        n_rho = d * (d - 1) // 2
        zb = self.priors.z_rho_bound - 1e-3
        return (
            [self.config.alpha_bounds]
            + [(None, None)] * d
            + [self.config.log_sigma_bounds] * d
            + [(-zb, zb)] * n_rho
        )

    def _objective(self, v: np.ndarray) -> float:
        phi = HyperParams.from_vector(v, self.spec.n_random)
        try:
            value, mode = self.log_marginal_hyper(phi, x0=self._mode_cache.get("warm"))
        except (ModeNotFoundError, np.linalg.LinAlgError, InvalidParameterError):
            return 1e10
        if mode is None or not math.isfinite(value):
            return 1e10
        self._mode_cache["warm"] = mode.chi
        self._mode_cache[v.tobytes()] = mode.chi
        return -value

    def _objective_grad(self, v: np.ndarray) -> np.ndarray:
        # Central differences; step large enough to dominate the inner
        # Newton's convergence noise.
        h = self.config.hyper_fd_eps * np.maximum(1.0, np.abs(v))
        bounds = self._hyper_bounds()
        g = np.zeros(len(v))
        for j in range(len(v)):
            e = np.zeros(len(v))
            e[j] = h[j]
            lb, ub = bounds[j]
            up, dn = v + e, v - e
            if ub is not None and up[j] > ub:
                up = v
            if lb is not None and dn[j] < lb:
                dn = v
            width = up[j] - dn[j]
            g[j] = (self._objective(up) - self._objective(dn)) / width if width > 0 else 0.0
        return g

    def explore_hyper(self) -> IntegrationGrid:
        """Find the hyper mode, then build the eigen-axis grid around it."""
        cfg = self.config
        d = self.spec.n_random
        x0 = self._hyper_vector_start()
        res = minimize(
            self._objective,
            x0,
            jac=self._objective_grad,
            method="L-BFGS-B",
            bounds=self._hyper_bounds(),
            options={"maxiter": cfg.hyper_max_iter},
        )
        if not math.isfinite(res.fun) or res.fun >= 1e10:
            raise InferenceError("hyperparameter mode search did not converge")
        mode_v = np.asarray(res.x, dtype=float)
        mode_ld = -float(res.fun)

        k = len(mode_v)
        neg_hess = self._hyper_fd_hessian(mode_v, mode_ld)
        evals, evecs = np.linalg.eigh(neg_hess)
        floor = max(float(evals.max()), 1e-8) * 1e-8
        evals = np.maximum(evals, floor)
        directions = evecs / np.sqrt(evals)[None, :]
        phi_cov = (evecs / evals[None, :]) @ evecs.T

        points = [mode_v]
        log_dens = [mode_ld]
        for axis in range(k):
            for sign in (1.0, -1.0):
                for m in range(1, cfg.grid_max_axis_steps + 1):
                    if len(points) >= cfg.grid_max_points:
                        break
                    cand = mode_v + sign * m * cfg.grid_step * directions[:, axis]
                    if not self._in_bounds(cand):
                        break
                    ld = -self._objective(cand)
                    if not math.isfinite(ld) or mode_ld - ld > cfg.grid_delta:
                        break
                    points.append(cand)
                    log_dens.append(ld)
        return IntegrationGrid(
            points=np.asarray(points),
            log_dens=np.asarray(log_dens),
            weights=np.ones(len(points)),
            mode_phi=mode_v,
            phi_cov=phi_cov,
        )

    def _in_bounds(self, v: np.ndarray) -> bool:
        for x, (lb, ub) in zip(v, self._hyper_bounds()):
            if lb is not None and x < lb:
                return False
            if ub is not None and x > ub:
                return False
        return True

    def _hyper_fd_hessian(self, v: np.ndarray, f0: float) -> np.ndarray:
        """Central-difference negative Hessian of the log hyper marginal."""
        k = len(v)
        h = self.config.hessian_fd_step * np.maximum(1.0, np.abs(v))
        hess = np.zeros((k, k))

        def f(x):
            val = -self._objective(x)
            return val if math.isfinite(val) else -1e10

        fp = np.zeros(k)
        fm = np.zeros(k)
        for i in range(k):
            e = np.zeros(k)
            e[i] = h[i]
            fp[i] = f(v + e)
            fm[i] = f(v - e)
            hess[i, i] = (fp[i] - 2.0 * f0 + fm[i]) / h[i] ** 2
        for i in range(k):
            for j in range(i + 1, k):
                ei = np.zeros(k)
                ej = np.zeros(k)
                ei[i] = h[i]
                ej[j] = h[j]
                fpp = f(v + ei + ej)
                fmm = f(v - ei - ej)
                hess[i, j] = hess[j, i] = (fpp - fp[i] - fp[j] + 2.0 * f0 - fm[i] - fm[j] + fmm) / (
                    2.0 * h[i] * h[j]
                )
        return -hess

    # -- step 2/3: latent marginals and sampling ------------------------------

    def _grid_modes(self, grid: IntegrationGrid) -> list:
        out = []
        warm = self._mode_cache.get("warm")
        for v in grid.points:
            cached = self._mode_cache.get(v.tobytes())
            phi = HyperParams.from_vector(v, self.spec.n_random)
            mode = self.latent_mode(phi, x0=cached if cached is not None else warm)
            warm = mode.chi
            out.append(mode)
        return out

    def latent_marginals(self, grid: IntegrationGrid) -> LatentMarginals:
        """Gaussian mixture marginals of every latent coordinate."""
        modes = self._grid_modes(grid)
        means = np.empty((grid.n_points, self.layout.total))
        sds = np.empty_like(means)
        for h, mode in enumerate(modes):
            means[h] = mode.chi
            var_b, var_f = mode.factor.marginal_variances()
            sds[h] = np.sqrt(np.concatenate([var_b.ravel(), var_f]))
        return LatentMarginals(
            means=means,
            sds=sds,
            weights=grid.posterior_weights,
            layout=self.layout,
            quantile_tol=self.config.quantile_tol,
        )

    def posterior_sample(self, grid: IntegrationGrid, n_draws: int, rng: np.random.Generator) -> PosteriorDraws:
        """Joint draws: a grid point by posterior weight, then the Gaussian there."""
        modes = self._grid_modes(grid)
        which = rng.choice(grid.n_points, size=n_draws, p=grid.posterior_weights)
        chi = np.empty((n_draws, self.layout.total))
        phi = np.empty((n_draws, grid.points.shape[1]))
        for h in range(grid.n_points):
            idx = np.nonzero(which == h)[0]
            if len(idx) == 0:
                continue
            mode = modes[h]
            mean_b, mean_f = self.layout.split(mode.chi)
            xb, xf = mode.factor.sample(mean_b, mean_f, rng, size=len(idx))
            chi[idx] = np.concatenate([xb.reshape(len(idx), -1), xf], axis=1)
            phi[idx] = grid.points[h]
        return PosteriorDraws(chi=chi, phi=phi, layout=self.layout)

    # -- summaries -------------------------------------------------------------

    def _hyper_profile(self, grid: IntegrationGrid, j: int):
        """Numeric 1-D marginal of hyper coordinate j.

        The log marginal is evaluated along the conditional-mean path
        (others follow their Gaussian regression on coordinate j), which for
        an exactly Gaussian posterior traces the true marginal of phi_j;
        skewness in the true posterior shows up directly in the evaluated
        densities.  Steps extend adaptively until the density has dropped
        by profile_drop.
        """
        cfg = self.config
        k = len(grid.mode_phi)
        path = grid.phi_cov[:, j] / grid.phi_cov[j, j] if grid.phi_cov[j, j] > 0 else None
        if path is None or not np.all(np.isfinite(path)) or abs(path[j] - 1.0) > 1e-8:
            path = np.zeros(k)
            path[j] = 1.0

        center_ld = float(grid.log_dens[0])

        def logdens(t: float) -> float:
            v = grid.mode_phi + t * path
            if not self._in_bounds(v):
                return -math.inf
            return -self._objective(v)

        # step size targeting a ~0.5 log-unit drop at one step
        h = math.sqrt(max(float(grid.phi_cov[j, j]), 1e-12))
        h = min(max(h, 1e-3), 2.0)
        for _ in range(20):
            drop = center_ld - max(logdens(h), logdens(-h))
            if drop > 3.0:
                h *= 0.5
            elif drop < 0.08:
                h *= 2.0
            else:
                break

        ts = [0.0]
        lds = [center_ld]
        for sign in (1.0, -1.0):
            for m in range(1, cfg.profile_max_steps + 1):
                t = sign * m * h
                ld = logdens(t)
                ts.append(t)
                lds.append(ld)
                if not math.isfinite(ld) or center_ld - ld > cfg.profile_drop:
                    break
        order = np.argsort(ts)
        return np.asarray(ts)[order], np.asarray(lds)[order]

    def _hyper_summaries(self, grid: IntegrationGrid) -> list:
        """Numeric profile marginals mapped through the reporting transforms."""
        labels = hyper_labels(self.spec)
        d = self.spec.n_random
        out = []
        for j, name in enumerate(labels):
            if j <= d:
                transform = lambda x: x
            elif j <= 2 * d:
                transform = np.exp
            else:
                transform = np.tanh
            ts, lds = self._hyper_profile(grid, j)
            x = grid.mode_phi[j] + ts
            dens = np.exp(lds - lds.max())
            # trapezoid mass per node
            w = np.zeros(len(x))
            dx = np.diff(x)
            w[:-1] += 0.5 * dx * dens[:-1]
            w[1:] += 0.5 * dx * dens[1:]
            mass = w.sum()
            if mass <= 0 or len(x) < 3:
                raise InferenceError(f"degenerate profile marginal for {name}")
            w /= mass
            g = transform(x)
            mean = float(w @ g)
            sd = math.sqrt(max(float(w @ (g - mean) ** 2), 0.0))
            cdf = np.cumsum(w)
            lo = float(transform(np.interp(0.025, cdf, x)))
            hi = float(transform(np.interp(0.975, cdf, x)))
            out.append(ParameterSummary(name=name, mean=mean, sd=sd, q025=lo, q975=hi))
        return out

    def summarize(
        self,
        grid: IntegrationGrid,
        draws: PosteriorDraws | None = None,
        rng: np.random.Generator | None = None,
        group_labels=None,
    ) -> PosteriorSummary:
        """Assemble the parameter table and the derived cure/hazard report."""
        marg = self.latent_marginals(grid)
        lo = marg.quantile(0.025)
        hi = marg.quantile(0.975)
        mean = marg.mean()
        sd = marg.sd()
        fs = self.layout.fixed_start
        parameters = []
        for j, name in enumerate(latent_fixed_labels(self.spec)):
            parameters.append(
                ParameterSummary(name=name, mean=float(mean[fs + j]), sd=float(sd[fs + j]),
                                 q025=float(lo[fs + j]), q975=float(hi[fs + j]))
            )
        parameters.extend(self._hyper_summaries(grid))

        if draws is None:
            rng = rng or np.random.default_rng(0)
            draws = self.posterior_sample(grid, self.config.n_draws, rng)

        cure = self._cure_draws(draws)
        cure_mean = cure.mean(axis=0)
        cure_lo = np.quantile(cure, 0.025, axis=0)
        cure_hi = np.quantile(cure, 0.975, axis=0)

        ids = tuple(s.id for s in self.data.subjects)
        if group_labels is None:
            group_labels = tuple("all" for _ in ids)
        group_labels = tuple(group_labels)
        group_cure = {}
        for g in sorted(set(group_labels), key=str):
            sel = np.array([lbl == g for lbl in group_labels])
            group_cure[g] = (
                float(cure_mean[sel].mean()),
                float(cure_lo[sel].mean()),
                float(cure_hi[sel].mean()),
            )

        sb, sp, ig0 = self.layout.fixed_slices()
        hrs = []
        for j, name in enumerate(self.spec.survival_covariates):
            hr = np.exp(draws.chi[:, fs + sp.start + j])
            hrs.append(
                ParameterSummary(
                    name=f"hr_{name}",
                    mean=float(hr.mean()),
                    sd=float(hr.std()),
                    q025=float(np.quantile(hr, 0.025)),
                    q975=float(np.quantile(hr, 0.975)),
                )
            )

        return PosteriorSummary(
            parameters=tuple(parameters),
            cure_ids=ids,
            cure_mean=cure_mean,
            cure_lo=cure_lo,
            cure_hi=cure_hi,
            cure_group=group_labels,
            group_cure=group_cure,
            hazard_ratios=tuple(hrs),
        )

    def _cure_draws(self, draws: PosteriorDraws) -> np.ndarray:
        """(S, n) matrix of per-draw, per-subject cure fractions."""
        fs = self.layout.fixed_start
        sb, sp, ig0 = self.layout.fixed_slices()
        n, d = self.kd.n_subjects, self.kd.n_random
        s_draws = draws.chi.shape[0]
        b = draws.chi[:, :fs].reshape(s_draws, n, d)
        psi = draws.chi[:, fs + sp.start:fs + sp.stop]
        gamma = draws.phi[:, 1:1 + d]
        gamma0 = draws.chi[:, fs + ig0]
        alpha = draws.phi[:, 0]
        eta = psi @ self.kd.surv_w.T + np.einsum("snd,sd->sn", b, gamma)
        log_rate = gamma0[:, None] + eta
        out = np.zeros((s_draws, n))
        neg = alpha < 0.0
        out[neg] = np.exp(np.exp(log_rate[neg]) / alpha[neg, None])
        return out

    def fit(self, n_draws: int | None = None, rng: np.random.Generator | None = None, group_labels=None):
        """explore + marginalize + summarize in one call."""
        grid = self.explore_hyper()
        marginals = self.latent_marginals(grid)
        rng = rng or np.random.default_rng(0)
        draws = self.posterior_sample(grid, n_draws or self.config.n_draws, rng)
        summary = self.summarize(grid, draws=draws, group_labels=group_labels)
        return FitResult(grid=grid, marginals=marginals, draws=draws, summary=summary)


@dataclass(frozen=True)
class FitResult:
    grid: IntegrationGrid
    marginals: LatentMarginals
    draws: PosteriorDraws
    summary: PosteriorSummary


# -- module-level wrappers matching the operation names ----------------------


def log_joint(chi, phi: HyperParams, data: JointDataset, priors: PriorSpec | None = None) -> float:
    return InlaEngine(data, priors).log_joint(chi, phi)


def latent_mode(phi: HyperParams, data: JointDataset, priors: PriorSpec | None = None, x0=None) -> ModeResult:
    return InlaEngine(data, priors).latent_mode(phi, x0=x0)


def log_marginal_hyper(phi: HyperParams, data: JointDataset, priors: PriorSpec | None = None) -> float:
    return InlaEngine(data, priors).log_marginal_hyper(phi)[0]


def explore_hyper(data: JointDataset, priors: PriorSpec | None = None, config: FitConfig | None = None) -> IntegrationGrid:
    return InlaEngine(data, priors, config).explore_hyper()
