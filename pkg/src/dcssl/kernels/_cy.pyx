# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled implementation of the EM hot kernel (contract in _np.py)."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, expm1, isinf, log, log1p

from ._np import EStepArrays

cnp.import_array()

cdef double SERIES_R = 1e-8


def em_estep(delta, kx, exact_slot, eta, lam, double r):
    cdef cnp.int64_t[::1] delta_v = np.ascontiguousarray(delta, dtype=np.int64)
    cdef cnp.int64_t[::1] kx_v = np.ascontiguousarray(kx, dtype=np.int64)
    cdef cnp.int64_t[::1] slot_v = np.ascontiguousarray(exact_slot, dtype=np.int64)
    cdef double[::1] eta_v = np.ascontiguousarray(eta, dtype=np.float64)
    cdef double[::1] lam_v = np.ascontiguousarray(lam, dtype=np.float64)

    cdef Py_ssize_t n = delta_v.shape[0]
    cdef Py_ssize_t K = lam_v.shape[0]

    lam_cum_a = np.empty(K)
    cdef double[::1] lam_cum = lam_cum_a
    cdef Py_ssize_t j
    cdef double acc = 0.0
    for j in range(K):
        acc += lam_v[j]
        lam_cum[j] = acc
    cdef double total = acc

    v_a = np.empty(n)
    m0_a = np.empty(n)
    gp_a = np.empty(n)
    emu_a = np.empty(n)
    wleft_a = np.zeros(n)
    ci_a = np.empty(n)
    dk_a = np.zeros(K)
    btail_a = np.zeros(K + 1)
    bleft_a = np.zeros(K + 1)
    ecnt_a = np.zeros(K + 1)
    cdef double[::1] v = v_a
    cdef double[::1] m0 = m0_a
    cdef double[::1] gp = gp_a
    cdef double[::1] emu = emu_a
    cdef double[::1] wleft = wleft_a
    cdef double[::1] ci = ci_a
    cdef double[::1] dk = dk_a
    cdef double[::1] btail = btail_a
    cdef double[::1] bleft = bleft_a
    cdef double[::1] ecnt = ecnt_a

    cdef Py_ssize_t i, kxi, slot
    cdef cnp.int64_t d
    cdef double vi, rv, s1, l1p, m0i, om0, om0gp, gpi, emui, wi, lam_at
    cdef double term, loglik = 0.0

    for i in range(n):
        kxi = kx_v[i]
        lam_at = lam_cum[kxi - 1] if kxi > 0 else 0.0
        vi = eta_v[i] * lam_at
        v[i] = vi
        rv = r * vi
        gpi = 1.0 / (1.0 + rv)
        if r == 0.0:
            s1 = vi
            l1p = 0.0
        elif r < SERIES_R:
            s1 = vi * (1.0 - rv / 2.0 + rv * rv / 3.0)
            l1p = log1p(rv)
        else:
            l1p = log1p(rv)
            s1 = l1p / r
        m0i = exp(-s1)
        om0 = -expm1(-s1)
        om0gp = -expm1(-(s1 + l1p))
        m0[i] = m0i
        gp[i] = gpi

        d = delta_v[i]
        if d == 1:
            emui = (1.0 + r) * gpi
            wi = 0.0
            term = log(lam_v[slot_v[i]]) + log(eta_v[i]) - s1 - l1p
        elif d == 3:
            emui = om0gp / om0
            wi = eta_v[i] / om0
            term = log(om0)
        else:
            emui = gpi
            wi = 0.0
            term = -s1
        emu[i] = emui
        wleft[i] = wi
        if isinf(term) and term < 0.0:
            term = -745.0
        loglik += term

        ci[i] = eta_v[i] * emui * (total - lam_at)
        if d == 1:
            ci[i] += 1.0
            ecnt[slot_v[i]] += 1.0
        elif d == 3:
            ci[i] += wi * lam_at
            slot = kxi - 1 if kxi > 0 else 0
            bleft[slot] += wi
        btail[kxi] += eta_v[i] * emui

    cdef double b_fwd = 0.0
    cdef double a_rev
    if K > 0:
        a_rev = 0.0
        for j in range(K - 1, -1, -1):
            a_rev += bleft[j]
            bleft[j] = a_rev
        for j in range(K):
            b_fwd += btail[j]
            dk[j] = lam_v[j] * (bleft[j] + b_fwd) + ecnt[j]

    return EStepArrays(v_a, m0_a, gp_a, emu_a, wleft_a, ci_a, dk_a, loglik)
