"""NPMLE of the semiparametric transformation model for doubly censored data.

The baseline cumulative hazard is a step function with jumps only at the
distinct exact event times.  Estimation runs an EM algorithm over latent
gamma frailties and per-grid-point Poisson counts: the E-step reduces to
closed-form frailty moments, the jump update has a closed form, and the
regression coefficients solve a Cox-form concave profile score.

The same machinery fits the surrogate working model: pass a surrogate
view of the cohort (see Cohort.surrogate_view).
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import EmError

# slack allowed for a per-iteration decrease of the observed log-likelihood
ASCENT_SLACK = 1e-8


@dataclass(frozen=True)
class JumpGrid:
    """Baseline hazard support: strictly increasing times with nonnegative jumps."""

    times: np.ndarray
    jumps: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        jumps = np.asarray(self.jumps, dtype=float)
        if times.ndim != 1 or jumps.shape != times.shape:
            raise EmError("grid times and jumps must be matching 1-d arrays")
        if times.size and np.any(np.diff(times) <= 0):
            raise EmError("grid times must be strictly increasing")
        if np.any(jumps < 0):
            raise EmError("grid jumps must be nonnegative")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "jumps", jumps)

    @property
    def k(self):
        return self.times.size

    def cumulative(self):
        return np.cumsum(self.jumps)


@dataclass
class EmFit:
    beta: np.ndarray
    grid: JumpGrid
    loglik_trace: np.ndarray
    iterations: int
    converged: bool
    r: float
    # subjects kept in the fit; left-censored observations below the first
    # grid time are informationless on the grid and are excluded
    included: np.ndarray = None


class EStepCache:
    """Per-subject E-step expectations at a fixed parameter point.

    Holds the compact per-subject quantities the EM uses (row sums `ci`,
    column sums `dk`, frailty means `emu`, cumulative intensities `v`)
    and materializes the full n x K matrix of E(N_ik) on demand as `en`.
    """

    def __init__(self, prepared, lam, raw, eta):
        self._prep = prepared
        self.lam = lam
        self.eta = eta
        self.v = raw.v
        self.m0 = raw.m0
        self.gp = raw.gp
        self.emu = raw.emu
        self.wleft = raw.wleft
        self.ci = raw.ci
        self.dk = raw.dk
        self.loglik = raw.loglik
        self._en = None

    @property
    def en(self):
        if self._en is None:
            prep = self._prep
            n = prep.delta.size
            K = self.lam.size
            en = np.zeros((n, K))
            cols = np.arange(K)
            tail = cols[None, :] >= prep.kx[:, None]
            en += np.where(tail, (self.eta * self.emu)[:, None] * self.lam[None, :], 0.0)
            left = prep.delta == 3
            if np.any(left):
                inwin = left[:, None] & (cols[None, :] < prep.kx[:, None])
                en = np.where(inwin, self.wleft[:, None] * self.lam[None, :], en)
            exact = prep.delta == 1
            if np.any(exact):
                en[np.flatnonzero(exact), prep.exact_slot[exact]] += 1.0
            self._en = en
        return self._en


class _Prepared:
    """Cohort columns digested for the kernel: codes, grid indices, design.

    A left-censored subject whose observation sits below the first grid
    time has V = 0 identically: its likelihood factor is zero for every
    parameter value, so it carries no information the jump grid can
    represent.  `drop_left_below_grid` removes such subjects (restricted
    NPMLE); `included` records the kept rows relative to the input.
    """

    def __init__(self, delta, kx, exact_slot, z, times, included, n_full):
        self.delta = delta
        self.kx = kx
        self.exact_slot = exact_slot
        self.z = z
        self.times = times
        self.included = included
        self.n_full = n_full

    @classmethod
    def build(cls, data, grid, drop_left_below_grid=False):
        times = grid.times
        x = data.x
        delta = data.delta
        if np.any(delta == 0) or np.any(np.isnan(x)):
            raise EmError("EM requires an outcome on every record (labeled view)")
        n_full = x.size
        kx = np.searchsorted(times, x, side="right").astype(np.int64)
        included = np.ones(n_full, dtype=bool)
        if drop_left_below_grid:
            included = ~((delta == 3) & (kx == 0))
            if not np.all(included):
                x = x[included]
                delta = delta[included]
                kx = kx[included]
        z = np.ascontiguousarray(data.z[included])
        exact_slot = np.full(x.size, -1, dtype=np.int64)
        exact = delta == 1
        if np.any(exact):
            slots = kx[exact] - 1
            if np.any(slots < 0) or np.any(times[slots] != x[exact]):
                raise EmError("exact event time missing from the jump grid")
            exact_slot[exact] = slots
        return cls(delta, kx, exact_slot, z, times, included, n_full)

    @property
    def n_dropped(self):
        return self.n_full - self.delta.size

    def eta(self, beta):
        return np.exp(self.z @ beta)

    def check_left_support(self):
        bad = (self.delta == 3) & (self.kx == 0)
        if np.any(bad):
            idx = np.flatnonzero(bad)
            raise EmError(
                "left-censored subject(s) below the first exact event time "
                f"(record indices {idx.tolist()[:5]}): E-step undefined (V=0)"
            )


def event_grid(data):
    """Jump grid at the distinct exact event times, jumps initialized to 1/K."""
    exact = data.delta == 1
    if not np.any(exact):
        raise EmError("no exact event times: jump grid is empty")
    times = np.unique(data.x[exact])
    k = times.size
    return JumpGrid(times, np.full(k, 1.0 / k))


def _validate_design(z):
    if z.shape[0] <= z.shape[1]:
        raise EmError("need more subjects than covariates")
    centered = z - z.mean(axis=0)
    if np.linalg.matrix_rank(centered) < z.shape[1]:
        raise EmError(
            "covariate matrix is rank-deficient after centering "
            "(constant or collinear column)"
        )


def e_step(data, zeta, r):
    """E-step expectations at zeta = (beta, grid)."""
    beta, grid = zeta
    prep = _Prepared.build(data, grid)
    prep.check_left_support()
    lam = np.asarray(grid.jumps, dtype=float)
    eta = prep.eta(beta)
    raw = kernels.em_estep(prep.delta, prep.kx, prep.exact_slot, eta, lam, r)
    return EStepCache(prep, lam, raw, eta)


def m_step_lambda(cache, data, beta):
    """Closed-form jump update: lambda_k = sum_i E(N_ik) / sum_i E(mu_i) e^{z_i'b}."""
    prep = cache._prep
    denom = float(np.sum(cache.emu * prep.eta(beta)))
    if not denom > 0.0:
        raise EmError("jump update denominator vanished")
    return cache.dk / denom


def _profile_newton(z, ci, emu, beta0, *, tol=1e-9, max_iter=50):
    """Damped Newton on the concave profile objective for beta.

    Solves sum_i c_i z_i = C * zbar(beta) with zbar the E(mu)e^{z'b}-weighted
    covariate mean; the objective is sum_i c_i z_i'b - C log S(beta).
    """
    beta = np.asarray(beta0, dtype=float).copy()
    c_tot = float(ci.sum())
    zc = z.T @ ci
    scale = max(1.0, c_tot)

    def parts(b):
        w = emu * np.exp(z @ b)
        s = float(w.sum())
        zbar = (w @ z) / s
        obj = float(zc @ b) - c_tot * np.log(s)
        return w, s, zbar, obj

    w, s, zbar, obj = parts(beta)
    # sufficient-decrease checks need headroom for rounding noise in obj
    noise = 64.0 * np.finfo(float).eps * max(1.0, abs(obj))
    for _ in range(max_iter):
        score = zc - c_tot * zbar
        if np.max(np.abs(score)) <= tol * scale:
            return beta
        zdiff = z - zbar
        hess = -c_tot * (zdiff.T @ (zdiff * (w / s)[:, None]))
        try:
            step = np.linalg.solve(-hess, score)
        except np.linalg.LinAlgError:
            raise EmError(
                "singular Hessian in profile Newton",
                beta=beta,
                grad_norm=float(np.max(np.abs(score))),
            )
        t = 1.0
        for _ in range(40):
            cand = beta + t * step
            w2, s2, zbar2, obj2 = parts(cand)
            if obj2 >= obj + 1e-4 * t * float(score @ step) - noise:
                beta, w, s, zbar, obj = cand, w2, s2, zbar2, obj2
                break
            t *= 0.5
        else:
            raise EmError(
                "profile Newton line search failed",
                beta=beta,
                grad_norm=float(np.max(np.abs(score))),
            )
    score = zc - c_tot * zbar
    if np.max(np.abs(score)) <= tol * scale:
        return beta
    raise EmError(
        f"profile Newton did not converge in {max_iter} steps",
        beta=beta,
        grad_norm=float(np.max(np.abs(score))),
    )


def m_step_beta(cache, data, beta_init):
    """Root of the profile score with E-step expectations frozen."""
    prep = cache._prep
    return _profile_newton(prep.z, cache.ci, cache.emu, beta_init)


def observed_loglik(data, zeta, r):
    """Observed-data log-likelihood; -inf terms floored at -745."""
    beta, grid = zeta
    prep = _Prepared.build(data, grid)
    lam = np.asarray(grid.jumps, dtype=float)
    raw = kernels.em_estep(prep.delta, prep.kx, prep.exact_slot, prep.eta(beta), lam, r)
    return raw.loglik


def fit_em(data, r, *, max_iter=500, tol=1e-6, beta_init=None):
    """EM fit of (beta, Lambda); stops when max|d beta| + max|d lambda| < tol.

    Left-censored subjects below the first exact event time are dropped
    (their likelihood factor is identically zero on the grid); the kept
    rows are recorded in the returned fit's `included` mask.
    """
    grid0 = event_grid(data)
    _validate_design(data.z)
    prep = _Prepared.build(data, grid0, drop_left_below_grid=True)

    p = data.z.shape[1]
    beta = np.zeros(p) if beta_init is None else np.asarray(beta_init, dtype=float)
    lam = grid0.jumps.copy()
    trace = []
    converged = False
    iterations = 0

    for iterations in range(1, max_iter + 1):
        raw = kernels.em_estep(prep.delta, prep.kx, prep.exact_slot, prep.eta(beta), lam, r)
        trace.append(raw.loglik)
        beta_new = _profile_newton(prep.z, raw.ci, raw.emu, beta)
        denom = float(np.sum(raw.emu * prep.eta(beta_new)))
        lam_new = raw.dk / denom
        delta_step = float(
            np.max(np.abs(beta_new - beta)) + np.max(np.abs(lam_new - lam))
        )
        beta, lam = beta_new, lam_new
        if delta_step < tol:
            converged = True
            break

    final = kernels.em_estep(prep.delta, prep.kx, prep.exact_slot, prep.eta(beta), lam, r)
    trace.append(final.loglik)

    trace = np.asarray(trace)
    drops = np.diff(trace)
    slack = ASCENT_SLACK * np.maximum(1.0, np.abs(trace[:-1]))
    if np.any(drops < -slack):
        worst = float(drops.min())
        raise EmError(f"observed log-likelihood decreased by {-worst:.3e} in EM")

    return EmFit(
        beta=beta,
        grid=JumpGrid(grid0.times, lam),
        loglik_trace=trace,
        iterations=iterations,
        converged=converged,
        r=float(r),
        included=prep.included,
    )


def profile_lambda(prep, beta, lam0, r, *, tol=1e-8, max_iter=20000):
    """Iterate E-step + jump update at fixed beta until the jumps settle.

    Used by the influence module to differentiate the lambda-profile.
    Returns (lam, raw) with raw the E-step at the final jumps.
    """
    eta = prep.eta(beta)
    lam = np.asarray(lam0, dtype=float).copy()
    raw = None
    for _ in range(max_iter):
        raw = kernels.em_estep(prep.delta, prep.kx, prep.exact_slot, eta, lam, r)
        denom = float(np.sum(raw.emu * eta))
        lam_new = raw.dk / denom
        step = float(np.max(np.abs(lam_new - lam)))
        lam = lam_new
        if step < tol:
            return lam, kernels.em_estep(
                prep.delta, prep.kx, prep.exact_slot, eta, lam, r
            )
    raise EmError(f"lambda profile did not settle in {max_iter} sweeps")
