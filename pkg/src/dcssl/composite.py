"""Flexible surrogate working model: logistic left-censoring + Cox partial likelihood.

The surrogate outcome is doubly censored, so its likelihood is split into
a Bernoulli part for the probability of left censoring, with linear
predictor theta'v_i and v_i = (1, H(L_i), z_i')', and a Cox partial
likelihood over the exact surrogate events with risk sets restricted to
non-left-censored subjects (Breslow ties).  The combined log-likelihood
is concave in theta = (alpha0, alpha1, gamma')'.

Only theta is identified; no attempt is made to recover the monotone
transform of the surrogate model.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import CompositeError

SEPARATION_ALPHA = 30.0


@dataclass(frozen=True)
class DesignV:
    """Rows (1, H(l_i), z_i')'; h_name records the transform used."""

    rows: np.ndarray
    h_name: str


def build_design(data, h="log"):
    """Design matrix for the logistic part; h in {"log", "identity"}."""
    l = data.l
    if h == "log":
        if np.any(l <= 0):
            raise CompositeError("log transform requires positive left-censoring times")
        hl = np.log(l)
    elif h == "identity":
        hl = l.astype(float)
    else:
        raise CompositeError(f"unknown transform {h!r}; use 'log' or 'identity'")
    rows = np.column_stack([np.ones(len(l)), hl, data.z])
    return DesignV(rows=rows, h_name=h)


@dataclass
class CompositeFit:
    theta: np.ndarray
    neg_loglik: float
    score_norm: float
    hessian: np.ndarray
    converged: bool
    diagnostics: tuple = ()


class _CoxParts:
    """Sorted risk-set machinery for the partial-likelihood block.

    Subjects are ordered by surrogate time; suffix sums over the
    non-left-censored give S0/S1/S2 at each event time.  Ties share the
    risk set (>= convention).
    """

    def __init__(self, data):
        xs = data.x_star
        ds = data.delta_star
        self.z = data.z
        order = np.argsort(xs, kind="stable")
        self.order = order
        self.xs_sorted = xs[order]
        self.eligible_sorted = ds[order] != 3
        self.event_pos = np.flatnonzero(ds[order] == 1)
        self.is_exact = ds == 1
        self.n = len(xs)
        self.starts = np.searchsorted(
            self.xs_sorted, self.xs_sorted[self.event_pos], side="left"
        )

    def risk_sums(self, gamma):
        z_s = self.z[self.order]
        w = np.where(self.eligible_sorted, np.exp(z_s @ gamma), 0.0)
        s0_suf = np.cumsum(w[::-1])[::-1]
        s1_suf = np.cumsum((z_s * w[:, None])[::-1], axis=0)[::-1]
        return z_s, w, s0_suf, s1_suf

def _cox_loglik_score_hess(parts, gamma, *, want_hess):
    z_s, w, s0_suf, s1_suf = parts.risk_sums(gamma)
    starts = parts.starts
    if parts.event_pos.size == 0:
        p = parts.z.shape[1]
        return 0.0, np.zeros(p), np.zeros((p, p))
    s0 = s0_suf[starts]
    if np.any(s0 <= 0):
        t_bad = parts.xs_sorted[parts.event_pos[np.argmax(s0 <= 0)]]
        raise CompositeError(f"empty risk set at exact surrogate event time {t_bad}")
    s1 = s1_suf[starts]
    zev = z_s[parts.event_pos]
    zbar = s1 / s0[:, None]
    ll = float(np.sum((zev * gamma).sum(axis=1) - np.log(s0)))
    score = (zev - zbar).sum(axis=0)
    hess = None
    if want_hess:
        p = parts.z.shape[1]
        zw = z_s * w[:, None]
        s2_flat = np.cumsum((zw[:, :, None] * z_s[:, None, :])[::-1], axis=0)[::-1]
        s2 = s2_flat[starts]
        hess = np.zeros((p, p))
        for e in range(starts.size):
            m = s2[e] / s0[e] - np.outer(zbar[e], zbar[e])
            hess -= m
    return ll, score, hess


def _logistic_parts(theta, vrows, y, *, want_hess):
    lin = vrows @ theta
    # log(1 + e^lin) evaluated stably on both tails
    softplus = np.logaddexp(0.0, lin)
    ll = float(np.sum(y * lin - softplus))
    pr = expit(lin)
    resid = y - pr
    score = vrows.T @ resid
    hess = None
    if want_hess:
        wgt = pr * (1.0 - pr)
        hess = -(vrows * wgt[:, None]).T @ vrows
    return ll, score, hess


def _assemble(theta, data, design, *, want_hess=False, parts=None):
    vrows = design.rows
    y = (data.delta_star == 3).astype(float)
    gamma = theta[2:]
    if parts is None:
        parts = _CoxParts(data)
    ll1, sc1, h1 = _logistic_parts(theta, vrows, y, want_hess=want_hess)
    ll2, sc2, h2 = _cox_loglik_score_hess(parts, gamma, want_hess=want_hess)
    ll = ll1 + ll2
    score = sc1.copy()
    score[2:] += sc2
    hess = None
    if want_hess:
        hess = h1.copy()
        hess[2:, 2:] += h2
    return ll, score, hess, parts


def composite_negloglik(theta, data, design):
    """Negative of the combined logistic + partial log-likelihood."""
    ll, _, _, _ = _assemble(np.asarray(theta, dtype=float), data, design)
    return -ll


def composite_score(theta, data, design):
    """Score (gradient of the log-likelihood, not its negative)."""
    _, score, _, _ = _assemble(np.asarray(theta, dtype=float), data, design)
    return score


def composite_hessian(theta, data, design):
    """Hessian of the concave log-likelihood (negative semidefinite)."""
    _, _, hess, _ = _assemble(
        np.asarray(theta, dtype=float), data, design, want_hess=True
    )
    return hess


def fit_composite(data, design, *, max_iter=100, tol=1e-8, theta_init=None):
    """Newton with Armijo backtracking on the concave composite likelihood."""
    ds = data.delta_star
    has_exact = bool(np.any(ds == 1))
    has_left = bool(np.any(ds == 3))
    has_nonleft = bool(np.any(ds != 3))
    if not has_exact and not (has_left and has_nonleft):
        raise CompositeError(
            "degenerate surrogate data: no exact events and one-sided left censoring"
        )

    p_all = design.rows.shape[1]
    theta = (
        np.zeros(p_all) if theta_init is None else np.asarray(theta_init, dtype=float)
    )
    diagnostics = []
    if not has_exact:
        diagnostics.append("no exact surrogate events: gamma identified only "
                           "through the logistic part")

    parts = _CoxParts(data)
    ll, score, hess, _ = _assemble(theta, data, design, want_hess=True, parts=parts)
    noise = 64.0 * np.finfo(float).eps * max(1.0, abs(ll))
    converged = False
    separated = False
    for _ in range(max_iter):
        score_norm = float(np.max(np.abs(score)))
        if score_norm < tol:
            converged = True
            break
        if np.max(np.abs(theta[:2])) > SEPARATION_ALPHA:
            separated = True
            break
        neg_h = -hess
        try:
            step = np.linalg.solve(neg_h, score)
        except np.linalg.LinAlgError:
            ridge = 1e-10 * max(1.0, float(np.trace(neg_h)) / p_all)
            step = np.linalg.solve(neg_h + ridge * np.eye(p_all), score)
        t = 1.0
        accepted = False
        for _ in range(60):
            cand = theta + t * step
            ll2, score2, hess2, _ = _assemble(
                cand, data, design, want_hess=True, parts=parts
            )
            if ll2 >= ll + 1e-4 * t * float(score @ step) - noise:
                theta, ll, score, hess = cand, ll2, score2, hess2
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break

    score_norm = float(np.max(np.abs(score)))
    if separated or np.max(np.abs(theta[:2])) > SEPARATION_ALPHA:
        diagnostics.append(
            "complete separation suspected in the logistic part "
            f"(|alpha| > {SEPARATION_ALPHA:g})"
        )
        converged = False
    return CompositeFit(
        theta=theta,
        neg_loglik=-ll,
        score_norm=score_norm,
        hessian=hess,
        converged=converged,
        diagnostics=tuple(diagnostics),
    )
