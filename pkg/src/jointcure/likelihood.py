"""Per-subject log-likelihoods and random-effects-integrated marginals.

The conditional log-likelihood (given b) is Poisson log-masses plus the
survival contribution delta*log h - H plus the Gaussian log-density of b.
Marginalizing over b uses a Laplace approximation at the conditional mode,
with adaptive Gauss-Hermite quadrature on the same mode/curvature as the
fallback and reference.

The gradient of the Laplace-approximated total log-likelihood with respect
to the fixed effects is analytic, including the implicit dependence of the
mode and of the log-determinant term (third derivatives of the conditional
log-likelihood enter there); see total_loglik_gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from . import gompertz
from .model import (
    FixedEffects,
    InvalidParameterError,
    JointDataset,
    RandomEffects,
    RandomEffectsSpec,
    SubjectData,
    survival_linear_predictor,
)

ETA_CLAMP = 700.0


class ModeNotFoundError(RuntimeError):
    """Inner Newton failed to locate the conditional mode."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class SubjectLogLik:
    """The three additive pieces of one subject's conditional log-likelihood."""

    longitudinal: float
    survival: float
    prior_b: float

    @property
    def total(self) -> float:
        return self.longitudinal + self.survival + self.prior_b


def poisson_loglik(y: int, log_lambda: float) -> float:
    """log P(Y = y) for Y ~ Poisson(exp(log_lambda))."""
    if y < 0 or int(y) != y:
        raise InvalidParameterError(f"count must be a nonnegative integer, got {y}")
    if not math.isfinite(log_lambda):
        raise InvalidParameterError("log_lambda must be finite")
    return float(y * log_lambda - math.exp(min(log_lambda, ETA_CLAMP)) - gammaln(y + 1.0))


def survival_loglik(subject: SubjectData, fx: FixedEffects, eta_s: float) -> float:
    """delta * log h(T*) + the negative cumulative hazard at T*."""
    t = subject.observed_time
    log_h = fx.alpha * t + fx.gamma0 + eta_s
    big_h = math.exp(min(fx.gamma0 + eta_s + gompertz.log_growth_integral(fx.alpha, t), ETA_CLAMP)) if t > 0 else 0.0
    return float(subject.event * log_h - big_h)


def gaussian_logpdf(b: np.ndarray, spec: RandomEffectsSpec) -> float:
    """N(0, Sigma) log-density of a flat random-effect vector."""
    b = np.asarray(b, dtype=float)
    half = np.linalg.solve(spec.cholesky, b)
    d = spec.total_dim
    return float(-0.5 * (d * math.log(2.0 * math.pi) + spec.log_det_covariance + half @ half))


def conditional_loglik(subject: SubjectData, fx: FixedEffects, spec: RandomEffectsSpec, b) -> SubjectLogLik:
    """All three pieces at a given random-effect value."""
    if isinstance(b, RandomEffects):
        b = b.b
    b = np.asarray(b, dtype=float)
    re = RandomEffects(b)
    longi = 0.0
    for rec in subject.records:
        k = rec.biomarker_index
        sl = fx.random_slices()[k]
        eta = float(rec.fixed_covariates @ fx.beta[k] + rec.random_design @ b[sl])
        longi += poisson_loglik(rec.count, eta)
    eta_s = survival_linear_predictor(subject.survival_covariates, fx, re)
    return SubjectLogLik(
        longitudinal=longi,
        survival=survival_loglik(subject, fx, eta_s),
        prior_b=gaussian_logpdf(b, spec),
    )


# ---------------------------------------------------------------------------
# conditional derivatives and the inner Newton solve


@dataclass(frozen=True)
class _SubjectArrays:
    """Per-subject design flattened to the full-beta / flat-b coordinates."""

    z: np.ndarray         # (n_rec, D)
    x: np.ndarray         # (n_rec, P)
    y: np.ndarray
    logyfact: np.ndarray
    w: np.ndarray
    t: float
    delta: float


def _subject_arrays(subject: SubjectData, fx: FixedEffects) -> _SubjectArrays:
    slices = fx.random_slices()
    p_lens = [len(bk) for bk in fx.beta]
    p_total = sum(p_lens)
    p_starts = np.concatenate([[0], np.cumsum(p_lens)])
    d = sum(sl.stop - sl.start for sl in slices)
    n_rec = len(subject.records)
    z = np.zeros((n_rec, d))
    x = np.zeros((n_rec, p_total))
    y = np.zeros(n_rec)
    for j, rec in enumerate(subject.records):
        k = rec.biomarker_index
        z[j, slices[k]] = rec.random_design
        x[j, p_starts[k]:p_starts[k] + p_lens[k]] = rec.fixed_covariates
        y[j] = rec.count
    return _SubjectArrays(
        z=z, x=x, y=y, logyfact=gammaln(y + 1.0),
        w=np.asarray(subject.survival_covariates, dtype=float),
        t=float(subject.observed_time), delta=float(subject.event),
    )


def _conditional_parts(sa: _SubjectArrays, fx: FixedEffects, spec: RandomEffectsSpec, b: np.ndarray):
    """Value, gradient and negative Hessian of the conditional log-likelihood in b."""
    gamma = fx.gamma_flat
    beta = fx.beta_flat
    q_b = spec.precision

    eta = sa.x @ beta + sa.z @ b
    lam = np.exp(np.minimum(eta, ETA_CLAMP))
    ll = float(sa.y @ eta - lam.sum() - sa.logyfact.sum())
    grad = sa.z.T @ (sa.y - lam)
    neg_hess = (sa.z * lam[:, None]).T @ sa.z

    eta_s = float(sa.w @ fx.psi + b @ gamma)
    log_r = gompertz.log_growth_integral(fx.alpha, sa.t) if sa.t > 0 else -math.inf
    big_h = math.exp(min(fx.gamma0 + eta_s + log_r, ETA_CLAMP))
    ll += sa.delta * (fx.alpha * sa.t + fx.gamma0 + eta_s) - big_h
    grad += (sa.delta - big_h) * gamma
    neg_hess += big_h * np.outer(gamma, gamma)

    half = np.linalg.solve(spec.cholesky, b)
    d = spec.total_dim
    ll += -0.5 * (d * math.log(2.0 * math.pi) + spec.log_det_covariance + half @ half)
    grad += -q_b @ b
    neg_hess += q_b
    return ll, grad, neg_hess


def _newton_mode(parts_fn, dim: int, tol: float = 1e-8, max_iter: int = 50):
    """Maximize a concave-ish objective from 0 with step-halving Newton.

    parts_fn(b) must return (value, gradient, negative Hessian).  Returns
    (mode, value, negative Hessian at mode).
    """
    b = np.zeros(dim)
    ll, grad, neg_hess = parts_fn(b)
    best = (b, ll, float(np.max(np.abs(grad))))
    for _ in range(max_iter):
        if np.max(np.abs(grad)) < tol:
            return b, ll, neg_hess
        step = _solve_spd(neg_hess, grad)
        scale = 1.0
        for _ in range(40):
            cand = b + scale * step
            ll_new, grad_new, neg_hess_new = parts_fn(cand)
            if math.isfinite(ll_new) and ll_new >= ll - 1e-12:
                break
            scale *= 0.5
        else:
            raise ModeNotFoundError("line search failed to improve the conditional log-likelihood", best=best)
        b, ll, grad, neg_hess = cand, ll_new, grad_new, neg_hess_new
        if ll > best[1]:
            best = (b, ll, float(np.max(np.abs(grad))))
    raise ModeNotFoundError(
        f"Newton did not reach gradient tolerance {tol} in {max_iter} iterations "
        f"(best max-gradient {best[2]:.3e})",
        best=best,
    )


def _solve_spd(a: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve a x = rhs, ridging the diagonal if a is not positive definite."""
    ridge = 0.0
    scale = max(float(np.max(np.abs(np.diag(a)))), 1.0)
    for _ in range(12):
        try:
            chol = np.linalg.cholesky(a + ridge * np.eye(a.shape[0]))
            return np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
        except np.linalg.LinAlgError:
            ridge = max(2.0 * ridge, 1e-8 * scale)
            scale *= 4.0
    raise ModeNotFoundError("could not factor the negative Hessian even with ridging")


def _laplace_from_parts(parts_fn, dim: int):
    mode, ll, neg_hess = _newton_mode(parts_fn, dim)
    sign, logdet = np.linalg.slogdet(neg_hess)
    if sign <= 0:
        raise ModeNotFoundError("negative Hessian is not positive definite at the mode")
    return mode, neg_hess, float(ll + 0.5 * dim * math.log(2.0 * math.pi) - 0.5 * logdet)


def _aghq_from_parts(value_fn, mode: np.ndarray, neg_hess: np.ndarray, nodes: int) -> float:
    """Adaptive Gauss-Hermite integral of exp(value_fn) on the mode/curvature."""
    dim = len(mode)
    z1, w1 = np.polynomial.hermite.hermgauss(nodes)
    cov = np.linalg.inv(neg_hess)
    cov_chol = np.linalg.cholesky(cov)
    grids = np.meshgrid(*([z1] * dim), indexing="ij")
    z = np.stack([g.ravel() for g in grids], axis=1)          # (nodes^dim, dim)
    wgrids = np.meshgrid(*([np.log(w1)] * dim), indexing="ij")
    logw = np.sum(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    pts = mode[None, :] + math.sqrt(2.0) * z @ cov_chol.T
    vals = np.array([value_fn(pt) for pt in pts])
    _, logdet_cov = np.linalg.slogdet(cov)
    return float(
        logsumexp(vals + np.sum(z * z, axis=1) + logw)
        + 0.5 * dim * math.log(2.0)
        + 0.5 * logdet_cov
    )


def marginal_loglik_subject(
    subject: SubjectData,
    fx: FixedEffects,
    spec: RandomEffectsSpec,
    method: str = "laplace",
    nodes: int = 15,
) -> float:
    """log of the random-effects-integrated likelihood for one subject."""
    sa = _subject_arrays(subject, fx)
    dim = spec.total_dim
    parts_fn = lambda b: _conditional_parts(sa, fx, spec, b)
    mode, neg_hess, laplace = _laplace_from_parts(parts_fn, dim)
    if method == "laplace":
        return laplace
    if method == "quadrature":
        return _aghq_from_parts(lambda b: parts_fn(b)[0], mode, neg_hess, nodes)
    raise ValueError(f"unknown method {method!r}; expected 'laplace' or 'quadrature'")


def total_loglik(dataset, fx: FixedEffects, spec: RandomEffectsSpec, method: str = "laplace", nodes: int = 15) -> float:
    """Sum of per-subject marginal log-likelihoods."""
    subjects = dataset.subjects if isinstance(dataset, JointDataset) else dataset
    total = 0.0
    for subj in subjects:
        try:
            total += marginal_loglik_subject(subj, fx, spec, method=method, nodes=nodes)
        except Exception as e:
            raise type(e)(f"subject {subj.id}: {e}") from e
    return total


# ---------------------------------------------------------------------------
# analytic gradient of the Laplace-approximated total log-likelihood


def fixed_effect_labels(fx: FixedEffects) -> list[str]:
    """Coordinate names in the gradient's packing order."""
    labels = [f"beta{k}[{j}]" for k, bk in enumerate(fx.beta) for j in range(len(bk))]
    labels += [f"psi[{j}]" for j in range(len(fx.psi))]
    labels += [f"gamma{k}[{j}]" for k, gk in enumerate(fx.gamma_assoc) for j in range(len(gk))]
    labels += ["gamma0", "alpha"]
    return labels


def pack_fixed_effects(fx: FixedEffects) -> np.ndarray:
    return np.concatenate([fx.beta_flat, fx.psi, fx.gamma_flat, [fx.gamma0, fx.alpha]])


def unpack_fixed_effects(theta: np.ndarray, template: FixedEffects) -> FixedEffects:
    theta = np.asarray(theta, dtype=float)
    p_lens = [len(bk) for bk in template.beta]
    d_lens = [len(gk) for gk in template.gamma_assoc]
    pos = 0
    beta = []
    for n in p_lens:
        beta.append(theta[pos:pos + n])
        pos += n
    psi = theta[pos:pos + len(template.psi)]
    pos += len(template.psi)
    gamma = []
    for n in d_lens:
        gamma.append(theta[pos:pos + n])
        pos += n
    gamma0 = float(theta[pos])
    alpha = float(theta[pos + 1])
    return FixedEffects(beta=tuple(beta), psi=psi, gamma_assoc=tuple(gamma), gamma0=gamma0, alpha=alpha)


def _subject_laplace_gradient(sa: _SubjectArrays, fx: FixedEffects, spec: RandomEffectsSpec):
    """Laplace marginal value and its gradient w.r.t. packed fixed effects."""
    dim = spec.total_dim
    parts_fn = lambda b: _conditional_parts(sa, fx, spec, b)
    mode, m, laplace = _laplace_from_parts(parts_fn, dim)
    m_inv = np.linalg.inv(m)

    beta = fx.beta_flat
    gamma = fx.gamma_flat
    p, q, d = len(beta), len(fx.psi), dim
    n_theta = p + q + d + 2
    sl_beta = slice(0, p)
    sl_psi = slice(p, p + q)
    sl_gamma = slice(p + q, p + q + d)
    i_g0, i_alpha = p + q + d, p + q + d + 1

    eta = sa.x @ beta + sa.z @ mode
    lam = np.exp(np.minimum(eta, ETA_CLAMP))
    resid = sa.y - lam
    eta_s = float(sa.w @ fx.psi + mode @ gamma)
    scale = math.exp(min(fx.gamma0 + eta_s, ETA_CLAMP))
    r_val = gompertz.growth_integral(fx.alpha, sa.t)
    r_da = gompertz.growth_integral_dalpha(fx.alpha, sa.t)
    big_h = scale * r_val
    big_h_da = scale * r_da
    coef = sa.delta - big_h

    # explicit dl/dtheta at the mode
    dl = np.zeros(n_theta)
    dl[sl_beta] = sa.x.T @ resid
    dl[sl_psi] = coef * sa.w
    dl[sl_gamma] = coef * mode
    dl[i_g0] = coef
    dl[i_alpha] = sa.delta * sa.t - big_h_da

    # cross second derivatives d2l / db dtheta
    cross = np.zeros((d, n_theta))
    cross[:, sl_beta] = -(sa.z * lam[:, None]).T @ sa.x
    cross[:, sl_psi] = -big_h * np.outer(gamma, sa.w)
    cross[:, sl_gamma] = coef * np.eye(d) - big_h * np.outer(gamma, mode)
    cross[:, i_g0] = -big_h * gamma
    cross[:, i_alpha] = -big_h_da * gamma

    db_dtheta = m_inv @ cross

    # third-derivative tensor in b: dM/db_j
    gg = np.outer(gamma, gamma)
    t3 = np.einsum("r,rj,ra,rc->acj", lam, sa.z, sa.z, sa.z)
    t3 += big_h * gg[:, :, None] * gamma[None, None, :]

    grad = np.zeros(n_theta)
    for j in range(n_theta):
        if j < p:
            dm = (sa.z * (lam * sa.x[:, j])[:, None]).T @ sa.z
        elif j < p + q:
            dm = big_h * sa.w[j - p] * gg
        elif j < p + q + d:
            e = np.zeros(d)
            e[j - p - q] = 1.0
            dm = big_h * mode[j - p - q] * gg + big_h * (np.outer(e, gamma) + np.outer(gamma, e))
        elif j == i_g0:
            dm = big_h * gg
        else:
            dm = big_h_da * gg
        dm = dm + t3 @ db_dtheta[:, j]
        grad[j] = dl[j] - 0.5 * float(np.sum(m_inv * dm))
    return laplace, grad


def total_loglik_gradient(dataset, fx: FixedEffects, spec: RandomEffectsSpec):
    """(value, gradient) of the Laplace total log-likelihood over pack_fixed_effects order."""
    subjects = dataset.subjects if isinstance(dataset, JointDataset) else dataset
    total = 0.0
    grad = None
    for subj in subjects:
        try:
            val, g = _subject_laplace_gradient(_subject_arrays(subj, fx), fx, spec)
        except Exception as e:
            raise type(e)(f"subject {subj.id}: {e}") from e
        total += val
        grad = g if grad is None else grad + g
    if grad is None:
        grad = np.zeros(len(pack_fixed_effects(fx)))
    return total, grad
