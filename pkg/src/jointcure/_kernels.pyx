# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel backend; see _core.py for the contract.

Must stay numerically in lock-step with _kernels_py (same clamps, same
formulas); tests/test_kernels.py enforces parity.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, INFINITY

cnp.import_array()

DEF ETA_CLAMP = 700.0


def data_loglik(kd, double[:, ::1] b, double[::1] beta, double[::1] psi,
                double[::1] gamma, double gamma0,
                double[::1] alpha_t, double[::1] log_r):
    cdef long[::1] subj = kd.rec_subj
    cdef double[::1] y = kd.rec_y
    cdef double[::1] logyfact = kd.rec_logyfact
    cdef double[:, ::1] x = kd.rec_x
    cdef double[:, ::1] z = kd.rec_z
    cdef double[:, ::1] w = kd.surv_w
    cdef double[::1] delta = kd.surv_delta

    cdef Py_ssize_t n_rec = y.shape[0]
    cdef Py_ssize_t n = kd.n_subjects
    cdef Py_ssize_t p = kd.n_beta
    cdef Py_ssize_t q = kd.n_psi
    cdef Py_ssize_t d = kd.n_random
    cdef Py_ssize_t r, i, m
    cdef double eta, lam, s, log_big_h, big_h
    cdef double ll = 0.0

    for r in range(n_rec):
        i = subj[r]
        eta = 0.0
        for m in range(p):
            eta += x[r, m] * beta[m]
        for m in range(d):
            eta += z[r, m] * b[i, m]
        lam = exp(eta if eta < ETA_CLAMP else ETA_CLAMP)
        ll += y[r] * eta - lam - logyfact[r]

    for i in range(n):
        s = gamma0
        for m in range(q):
            s += w[i, m] * psi[m]
        for m in range(d):
            s += b[i, m] * gamma[m]
        log_big_h = s + log_r[i]
        if log_big_h == -INFINITY:
            big_h = 0.0
        else:
            big_h = exp(log_big_h if log_big_h < ETA_CLAMP else ETA_CLAMP)
        ll += delta[i] * (alpha_t[i] + s) - big_h
    return ll


def data_loglik_parts(kd, double[:, ::1] b, double[::1] beta, double[::1] psi,
                      double[::1] gamma, double gamma0,
                      double[::1] alpha_t, double[::1] log_r):
    cdef long[::1] subj = kd.rec_subj
    cdef double[::1] y = kd.rec_y
    cdef double[::1] logyfact = kd.rec_logyfact
    cdef double[:, ::1] x = kd.rec_x
    cdef double[:, ::1] z = kd.rec_z
    cdef double[:, ::1] w = kd.surv_w
    cdef double[::1] delta = kd.surv_delta

    cdef Py_ssize_t n_rec = y.shape[0]
    cdef Py_ssize_t n = kd.n_subjects
    cdef Py_ssize_t p = kd.n_beta
    cdef Py_ssize_t q = kd.n_psi
    cdef Py_ssize_t d = kd.n_random
    cdef Py_ssize_t f = p + q + d + 1
    cdef Py_ssize_t i_g0 = p + q + d

    grad_b_arr = np.zeros((n, d))
    grad_f_arr = np.zeros(f)
    hbb_arr = np.zeros((n, d, d))
    hbf_arr = np.zeros((n, d, f))
    hff_arr = np.zeros((f, f))
    cdef double[:, ::1] grad_b = grad_b_arr
    cdef double[::1] grad_f = grad_f_arr
    cdef double[:, :, ::1] hbb = hbb_arr
    cdef double[:, :, ::1] hbf = hbf_arr
    cdef double[:, ::1] hff = hff_arr

    cdef Py_ssize_t r, i, m, a, c
    cdef double eta, lam, resid, s, log_big_h, big_h, coef, za, ga
    cdef double ll = 0.0

    for r in range(n_rec):
        i = subj[r]
        eta = 0.0
        for m in range(p):
            eta += x[r, m] * beta[m]
        for m in range(d):
            eta += z[r, m] * b[i, m]
        lam = exp(eta if eta < ETA_CLAMP else ETA_CLAMP)
        resid = y[r] - lam
        ll += y[r] * eta - lam - logyfact[r]

        for m in range(p):
            grad_f[m] += resid * x[r, m]
        for a in range(d):
            za = z[r, a]
            grad_b[i, a] += resid * za
            for c in range(d):
                hbb[i, a, c] -= lam * za * z[r, c]
            for m in range(p):
                hbf[i, a, m] -= lam * za * x[r, m]
        for a in range(p):
            for c in range(p):
                hff[a, c] -= lam * x[r, a] * x[r, c]

    for i in range(n):
        s = gamma0
        for m in range(q):
            s += w[i, m] * psi[m]
        for m in range(d):
            s += b[i, m] * gamma[m]
        log_big_h = s + log_r[i]
        if log_big_h == -INFINITY:
            big_h = 0.0
        else:
            big_h = exp(log_big_h if log_big_h < ETA_CLAMP else ETA_CLAMP)
        coef = delta[i] - big_h
        ll += delta[i] * (alpha_t[i] + s) - big_h

        for m in range(q):
            grad_f[p + m] += coef * w[i, m]
        for m in range(d):
            grad_f[p + q + m] += coef * b[i, m]
            grad_b[i, m] += coef * gamma[m]
        grad_f[i_g0] += coef

        for a in range(d):
            ga = gamma[a]
            for c in range(d):
                hbb[i, a, c] -= big_h * ga * gamma[c]
                hbf[i, a, p + q + c] -= big_h * ga * b[i, c]
            hbf[i, a, p + q + a] += coef
            for m in range(q):
                hbf[i, a, p + m] -= big_h * ga * w[i, m]
            hbf[i, a, i_g0] -= big_h * ga
        for a in range(q):
            for c in range(q):
                hff[p + a, p + c] -= big_h * w[i, a] * w[i, c]
            for c in range(d):
                hff[p + a, p + q + c] -= big_h * w[i, a] * b[i, c]
                hff[p + q + c, p + a] -= big_h * w[i, a] * b[i, c]
            hff[p + a, i_g0] -= big_h * w[i, a]
            hff[i_g0, p + a] -= big_h * w[i, a]
        for a in range(d):
            for c in range(d):
                hff[p + q + a, p + q + c] -= big_h * b[i, a] * b[i, c]
            hff[p + q + a, i_g0] -= big_h * b[i, a]
            hff[i_g0, p + q + a] -= big_h * b[i, a]
        hff[i_g0, i_g0] -= big_h

    return ll, grad_b_arr, grad_f_arr, hbb_arr, hbf_arr, hff_arr
