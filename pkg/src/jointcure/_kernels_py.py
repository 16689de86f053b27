"""Pure-numpy kernel backend.

Mirrors jointcure._kernels exactly; see _core.py for the contract.  Kept
dependency-free beyond numpy so the package runs without a compiler.
"""

from __future__ import annotations

import numpy as np

ETA_CLAMP = 700.0


def _poisson_pieces(kd, b, beta):
    eta = kd.rec_x @ beta + np.einsum("nd,nd->n", kd.rec_z, b[kd.rec_subj])
    lam = np.exp(np.minimum(eta, ETA_CLAMP))
    return eta, lam


def _survival_pieces(kd, b, psi, gamma, gamma0, log_r):
    s = gamma0 + kd.surv_w @ psi + b @ gamma
    with np.errstate(invalid="ignore"):
        log_big_h = s + log_r
    big_h = np.exp(np.minimum(log_big_h, ETA_CLAMP))
    return s, big_h


def data_loglik(kd, b, beta, psi, gamma, gamma0, alpha_t, log_r):
    eta, lam = _poisson_pieces(kd, b, beta)
    ll = float(kd.rec_y @ eta - lam.sum() - kd.rec_logyfact.sum())
    s, big_h = _survival_pieces(kd, b, psi, gamma, gamma0, log_r)
    ll += float(kd.surv_delta @ (alpha_t + s) - big_h.sum())
    return ll


def data_loglik_parts(kd, b, beta, psi, gamma, gamma0, alpha_t, log_r):
    n, p, q, d = kd.n_subjects, kd.n_beta, kd.n_psi, kd.n_random
    f = kd.n_fixed
    sl_beta = slice(0, p)
    sl_psi = slice(p, p + q)
    sl_gamma = slice(p + q, p + q + d)
    i_g0 = p + q + d

    eta, lam = _poisson_pieces(kd, b, beta)
    resid = kd.rec_y - lam
    ll = float(kd.rec_y @ eta - lam.sum() - kd.rec_logyfact.sum())

    grad_b = np.zeros((n, d))
    grad_f = np.zeros(f)
    hbb = np.zeros((n, d, d))
    hbf = np.zeros((n, d, f))
    hff = np.zeros((f, f))

    # Poisson blocks; per-subject sums via bincount on the sorted index.
    subj = kd.rec_subj
    z, x = kd.rec_z, kd.rec_x
    grad_f[sl_beta] = x.T @ resid
    lam_x = lam[:, None] * x
    hff[sl_beta, sl_beta] -= x.T @ lam_x
    for a in range(d):
        grad_b[:, a] += np.bincount(subj, weights=resid * z[:, a], minlength=n)
        for c in range(a, d):
            acc = np.bincount(subj, weights=lam * z[:, a] * z[:, c], minlength=n)
            hbb[:, a, c] -= acc
            if c != a:
                hbb[:, c, a] -= acc
        for m in range(p):
            hbf[:, a, m] -= np.bincount(subj, weights=lam_x[:, m] * z[:, a], minlength=n)

    # Survival blocks.
    s, big_h = _survival_pieces(kd, b, psi, gamma, gamma0, log_r)
    coef = kd.surv_delta - big_h
    ll += float(kd.surv_delta @ (alpha_t + s) - big_h.sum())

    w = kd.surv_w
    grad_b += coef[:, None] * gamma
    grad_f[sl_psi] += w.T @ coef
    grad_f[sl_gamma] += b.T @ coef
    grad_f[i_g0] += coef.sum()

    gg = np.outer(gamma, gamma)
    hbb -= big_h[:, None, None] * gg
    # d2/(db dgamma): coef * I - H * gamma b'
    eye = np.eye(d)
    hbf[:, :, sl_gamma] += coef[:, None, None] * eye
    hbf[:, :, sl_gamma] -= big_h[:, None, None] * gamma[None, :, None] * b[:, None, :]
    hbf[:, :, sl_psi] -= big_h[:, None, None] * gamma[None, :, None] * w[:, None, :]
    hbf[:, :, i_g0] -= big_h[:, None] * gamma[None, :]

    hw = big_h[:, None] * w
    hb = big_h[:, None] * b
    hff[sl_psi, sl_psi] -= w.T @ hw
    hff[sl_psi, sl_gamma] -= w.T @ hb
    hff[sl_gamma, sl_psi] -= (w.T @ hb).T
    hff[sl_gamma, sl_gamma] -= b.T @ hb
    hff[sl_psi, i_g0] -= hw.sum(axis=0)
    hff[i_g0, sl_psi] -= hw.sum(axis=0)
    hff[sl_gamma, i_g0] -= hb.sum(axis=0)
    hff[i_g0, sl_gamma] -= hb.sum(axis=0)
    hff[i_g0, i_g0] -= big_h.sum()

    return ll, grad_b, grad_f, hbb, hbf, hff
