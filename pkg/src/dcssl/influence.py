"""Per-subject influence rows and the covariance blocks of the augmentation.

The supervised NPMLE and the EM working-model estimator get their rows by
numerically differentiating the jump-profile: for each coefficient the
jumps are re-profiled (EM sweeps at fixed coefficients) at perturbed
values, giving both the profile-score Jacobian and the d lambda/d beta
term of the per-subject summand.  The composite working model has closed
form rows from its logistic residual and the martingale decomposition of
the Cox partial score.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import kernels
from .em import _Prepared, profile_lambda
from .errors import InfluenceError


@dataclass
class InfluenceRows:
    xi: np.ndarray
    eta1: np.ndarray | None = None
    eta2: np.ndarray | None = None

    @property
    def eta3(self):
        if self.eta1 is None or self.eta2 is None:
            raise InfluenceError("eta3 requires both working-model row blocks")
        return np.hstack([self.eta1, self.eta2])


@dataclass
class CovBlocks:
    sigma: np.ndarray
    sigma_gamma: np.ndarray
    omega: np.ndarray
    rho: float


def _sym(a):
    return (a + a.T) / 2.0


def _profile_score(prep, eta, raw, lam_total):
    """Coefficient score at a profiled jump vector (EM identity form)."""
    return prep.z.T @ (raw.ci - eta * raw.emu * lam_total)


@dataclass
class ProfileDerivatives:
    """Profile-differentiation products shared by psi assembly and polish."""

    beta: np.ndarray
    lam: np.ndarray
    dlam: np.ndarray  # K x p
    a_hat: np.ndarray  # p x p curvature -(1/n) dPsi/dbeta'


def _differentiate_profile(prep, beta, lam, r, *, rel_step, profile_tol):
    n = prep.n_full
    p = beta.size
    k = lam.size
    dlam = np.empty((k, p))
    a_hat = np.empty((p, p))
    for j in range(p):
        h = rel_step * max(1.0, abs(beta[j]))
        scores = []
        lams = []
        for sign in (1.0, -1.0):
            bp = beta.copy()
            bp[j] += sign * h
            lam_p, raw_p = profile_lambda(prep, bp, lam, r, tol=profile_tol)
            eta_p = prep.eta(bp)
            scores.append(_profile_score(prep, eta_p, raw_p, float(lam_p.sum())))
            lams.append(lam_p)
        dlam[:, j] = (lams[0] - lams[1]) / (2.0 * h)
        a_hat[:, j] = -(scores[0] - scores[1]) / (2.0 * h * n)
    return ProfileDerivatives(beta=beta, lam=lam, dlam=dlam, a_hat=a_hat)


def _psi_rows(prep, raw, lam, dlam, eta):
    """Per-subject profile-score summands at the fitted point."""
    total = float(lam.sum())
    base = prep.z * (raw.ci - eta * raw.emu * total)[:, None]
    dcum = np.cumsum(dlam, axis=0)
    dle = np.zeros_like(base)
    pos = prep.kx > 0
    dle[pos] = dcum[prep.kx[pos] - 1]
    psi = base - (eta * raw.emu)[:, None] * dle
    left = prep.delta == 3
    if np.any(left):
        psi[left] += raw.wleft[left, None] * dle[left]
    exact = prep.delta == 1
    if np.any(exact):
        slots = prep.exact_slot[exact]
        psi[exact] += dlam[slots] / lam[slots][:, None]
    return psi


def _influence_from_fit(fit, data, *, rel_step=1e-4, profile_tol=1e-8,
                        polish_tol=1e-9, max_polish=10):
    """Shared implementation of xi_rows / eta1_rows."""
    if not fit.converged:
        raise InfluenceError("influence rows need a converged EM fit")
    prep = _Prepared.build(data, fit.grid, drop_left_below_grid=True)
    n = prep.n_full  # estimating equation normalized by the full count
    r = fit.r

    beta = fit.beta.astype(float).copy()
    lam, raw = profile_lambda(prep, beta, fit.grid.jumps, r, tol=profile_tol)

    deriv = _differentiate_profile(
        prep, beta, lam, r, rel_step=rel_step, profile_tol=profile_tol
    )
    cond = np.linalg.cond(deriv.a_hat)
    if not np.isfinite(cond) or cond > 1e12:
        raise InfluenceError(
            f"singular profile curvature (condition number {cond:.3e})"
        )

    # chord-Newton polish so the score identity holds to ~1e-9 per subject
    moved = 0.0
    for _ in range(max_polish):
        eta = prep.eta(beta)
        score = _profile_score(prep, eta, raw, float(lam.sum()))
        if np.max(np.abs(score)) / n < polish_tol:
            break
        step = np.linalg.solve(n * deriv.a_hat, score)
        beta = beta + step
        moved += float(np.max(np.abs(step)))
        lam, raw = profile_lambda(prep, beta, lam, r, tol=profile_tol)
    if moved > 0.1 * rel_step:
        deriv = _differentiate_profile(
            prep, beta, lam, r, rel_step=rel_step, profile_tol=profile_tol
        )

    psi = _psi_rows(prep, raw, lam, deriv.dlam, prep.eta(beta))
    try:
        rows_used = np.linalg.solve(deriv.a_hat, psi.T).T
    except np.linalg.LinAlgError:
        raise InfluenceError("singular profile curvature in row solve")
    rows = np.zeros((n, rows_used.shape[1]))
    rows[prep.included] = rows_used
    return rows


def xi_rows(em_fit, data, **opts):
    """Influence rows of the supervised NPMLE coefficient estimate."""
    return _influence_from_fit(em_fit, data, **opts)


def eta1_rows(em_fit_on_surrogate, data, **opts):
    """Influence rows of the EM working-model estimate (surrogate outcome)."""
    return _influence_from_fit(em_fit_on_surrogate, data.surrogate_view(), **opts)


def eta2_rows(comp_fit, data, design):
    """Influence rows of the composite working-model estimate.

    Logistic score residual times the design row, plus the martingale
    integral of the Cox partial score mapped into the gamma block, then
    scaled by the inverse of (1/n) times the composite Hessian; the
    gamma coordinates are returned.
    """
    if not comp_fit.converged:
        raise InfluenceError("influence rows need a converged composite fit")
    theta = comp_fit.theta
    gamma = theta[2:]
    n = len(data.records)
    p = data.z.shape[1]

    y = (data.delta_star == 3).astype(float)
    resid = y - expit(design.rows @ theta)
    eta_tilde = design.rows * resid[:, None]

    xs = data.x_star
    ds = data.delta_star
    z = data.z
    order = np.argsort(xs, kind="stable")
    xs_s = xs[order]
    elig_s = ds[order] != 3
    z_s = z[order]
    w_s = np.where(elig_s, np.exp(z_s @ gamma), 0.0)
    s0_suf = np.cumsum(w_s[::-1])[::-1]
    s1_suf = np.cumsum((z_s * w_s[:, None])[::-1], axis=0)[::-1]

    ev_pos = np.flatnonzero(ds[order] == 1)
    mart = np.zeros((n, p))
    if ev_pos.size:
        starts = np.searchsorted(xs_s, xs_s[ev_pos], side="left")
        s0_ev = s0_suf[starts]
        zbar_ev = s1_suf[starts] / s0_ev[:, None]
        # exact-event jump term, back in original order
        idx_ev = order[ev_pos]
        mart[idx_ev] = z[idx_ev] - zbar_ev
        # compensator: cumulative (z_i - zbar(t)) dLhat(t) over events t <= x*_i
        dl = 1.0 / s0_ev  # dA = 1/n per event, dLhat = dA / (S0/n)
        cum_dl = np.cumsum(dl)
        cum_zdl = np.cumsum(zbar_ev * dl[:, None], axis=0)
        ev_times = xs_s[ev_pos]
        n_ev_le = np.searchsorted(ev_times, xs, side="right")
        has = n_ev_le > 0
        comp = np.zeros((n, p))
        idx = n_ev_le[has] - 1
        comp[has] = z[has] * cum_dl[idx][:, None] - cum_zdl[idx]
        eligible = ds != 3
        mart -= np.where(eligible, np.exp(z @ gamma), 0.0)[:, None] * comp

    eta_tilde[:, 2:] += mart
    omega = comp_fit.hessian / n
    try:
        rows_full = -np.linalg.solve(omega, eta_tilde.T).T
    except np.linalg.LinAlgError:
        raise InfluenceError("singular composite curvature matrix")
    return rows_full[:, 2:]


def covariance_blocks(xi, eta, n, n_unlabeled):
    """Sample covariance blocks scaled for the augmentation formula."""
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if xi.shape[0] != n or eta.shape[0] != n:
        raise InfluenceError("row counts must equal the labeled size n")
    if n_unlabeled < 1:
        raise InfluenceError("augmentation needs at least one unlabeled record")
    total = n + n_unlabeled
    rho = n / total
    c = n_unlabeled / (n * total)  # = (1 - rho)/n
    sigma = _sym(xi.T @ xi) / n
    sigma_gamma = _sym(eta.T @ eta) * c
    omega = (xi.T @ eta) * c
    return CovBlocks(sigma=sigma, sigma_gamma=sigma_gamma, omega=omega, rho=rho)
