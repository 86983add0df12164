"""Pure-numpy implementation of the EM hot kernel.

This is the fallback backend; `dcssl.kernels._cy` implements the same
contract with C loops.  Both must produce the same values (up to float
summation order), which tests/test_kernels.py enforces.
"""

from collections import namedtuple

import numpy as np

SERIES_R = 1e-8

EStepArrays = namedtuple(
    "EStepArrays",
    ["v", "m0", "gp", "emu", "wleft", "ci", "dk", "loglik"],
)


def em_estep(delta, kx, exact_slot, eta, lam, r):
    """One E-step sweep over all subjects.

    Parameters
    ----------
    delta : int array (n,), censoring codes 1=exact, 2=right, 3=left.
    kx : int array (n,), number of grid times <= X_i (0..K).
    exact_slot : int array (n,), 0-based grid index of X_i for exact
        subjects, -1 otherwise.
    eta : float array (n,), exp(z_i' beta).
    lam : float array (K,), current baseline jumps.
    r : float, transformation index.

    Returns
    -------
    EStepArrays with per-subject V_i, m0(V_i), g'(V_i), E(mu_i), the
    left-censoring in-window weight w_i = eta_i/(1 - m0(V_i)), the row
    sums c_i = sum_k E(N_ik), the column sums d_k = sum_i E(N_ik), and
    the observed-data log-likelihood at the current parameters (each
    -inf term floored at -745).

    A left-censored subject with kx == 0 makes the expectations
    undefined (V_i = 0); callers must reject that case before relying
    on anything but `loglik`.
    """
    n = delta.shape[0]
    K = lam.shape[0]
    r = float(r)

    lam_cum = np.cumsum(lam)
    total = float(lam_cum[K - 1]) if K else 0.0
    lam_at = np.where(kx > 0, lam_cum[np.maximum(kx - 1, 0)], 0.0)
    v = eta * lam_at

    rv = r * v
    gp = 1.0 / (1.0 + rv)
    if r == 0.0:
        s1 = v
        l1p = np.zeros_like(v)
    elif r < SERIES_R:
        s1 = v * (1.0 - rv / 2.0 + rv * rv / 3.0)
        l1p = np.log1p(rv)
    else:
        l1p = np.log1p(rv)
        s1 = l1p / r
    s2 = s1 + l1p  # -log(m0 * gp)
    m0 = np.exp(-s1)
    one_minus_m0 = -np.expm1(-s1)
    one_minus_m0gp = -np.expm1(-s2)

    is_exact = delta == 1
    is_left = delta == 3

    with np.errstate(divide="ignore", invalid="ignore"):
        emu = np.where(is_exact, (1.0 + r) * gp, gp)
        emu = np.where(is_left, one_minus_m0gp / one_minus_m0, emu)
        wleft = np.where(is_left, eta / one_minus_m0, 0.0)

    tail = eta * emu * (total - lam_at)
    ci = tail + is_exact.astype(float)
    if np.any(is_left):
        ci = ci + np.where(is_left, wleft * lam_at, 0.0)

    dk = np.zeros(K)
    if K:
        e_counts = np.bincount(
            exact_slot[is_exact], minlength=K
        ).astype(float)
        btail = np.bincount(kx, weights=eta * emu, minlength=K + 1)
        b_fwd = np.cumsum(btail[:K])
        if np.any(is_left):
            kxl = np.maximum(kx[is_left] - 1, 0)
            bleft = np.bincount(kxl, weights=wleft[is_left], minlength=K)
            a_rev = np.cumsum(bleft[::-1])[::-1]
            dk = lam * (a_rev + b_fwd) + e_counts
        else:
            dk = lam * b_fwd + e_counts

    with np.errstate(divide="ignore", invalid="ignore"):
        term = -s1  # right-censored
        if np.any(is_exact):
            lam_slot = lam[np.maximum(exact_slot, 0)]
            term = np.where(
                is_exact, np.log(lam_slot) + np.log(eta) - s1 - l1p, term
            )
        if np.any(is_left):
            term = np.where(is_left, np.log(one_minus_m0), term)
    term = np.where(np.isneginf(term), -745.0, term)
    loglik = float(np.sum(term))

    return EStepArrays(v, m0, gp, emu, wleft, ci, dk, loglik)
