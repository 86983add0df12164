"""Semi-supervised augmentation of the supervised risk-effect estimate.

The supervised estimate is shifted by the variance-optimal linear
combination of working-model discrepancies (labeled-only fit minus
full-cohort fit), with covariance shrunk by the corresponding
cross-covariance block.  Augmentation never inflates the estimated
variance: the subtracted matrix is positive semidefinite by
construction.
"""

from dataclasses import dataclass, field

import numpy as np

from .composite import build_design, fit_composite
from .em import fit_em
from .errors import DcsslError, StageError
from .influence import covariance_blocks, eta1_rows, eta2_rows, xi_rows

Z975 = 1.959964  # normal quantile for 95% intervals

RIDGE_COND = 1e10
RIDGE_SCALE = 1e-8


@dataclass(frozen=True)
class SslConfig:
    """Options of the semi-supervised pipeline.

    max_iter is far above fit_em's own default: the proportional-odds
    end of the family converges slowly and the pipeline treats a
    non-converged stage as a failure.
    """

    r: float = 0.0
    use_model4: bool = True
    use_model5: bool = True
    h: str = "log"
    tol: float = 1e-6
    max_iter: int = 20000


@dataclass
class AugmentedEstimate:
    method: str
    beta: np.ndarray
    cov: np.ndarray
    se: np.ndarray
    ci95: np.ndarray  # p x 2
    re_vs_sl: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "method": self.method,
            "beta": self.beta.tolist(),
            "se": self.se.tolist(),
            "ci95": self.ci95.tolist(),
            "re_vs_sl": self.re_vs_sl.tolist(),
            "diagnostics": self.diagnostics,
        }


def _solve_sym(mat, rhs):
    """Symmetric solve with a conditional ridge for near-singular blocks."""
    d = mat.shape[0]
    cond = np.linalg.cond(mat)
    if not np.isfinite(cond) or cond > RIDGE_COND:
        eps = RIDGE_SCALE * np.trace(mat) / d
        mat = mat + eps * np.eye(d)
    return np.linalg.solve(mat, rhs)


def _finish(method, beta, cov, se_sl, diagnostics=None):
    cov = (cov + cov.T) / 2.0
    se = np.sqrt(np.diag(cov))
    ci = np.column_stack([beta - Z975 * se, beta + Z975 * se])
    with np.errstate(divide="ignore", invalid="ignore"):
        re = np.where(se > 0, se_sl / se, np.inf)
    return AugmentedEstimate(
        method=method,
        beta=np.asarray(beta, dtype=float),
        cov=cov,
        se=se,
        ci95=ci,
        re_vs_sl=re,
        diagnostics=diagnostics or {},
    )


def augment(beta_sl, gamma_hat, gamma_bar, blocks, *, method="SSL", n=None):
    """Variance-optimal augmentation of beta_sl by the working-model discrepancy."""
    beta_sl = np.asarray(beta_sl, dtype=float)
    gamma_hat = np.asarray(gamma_hat, dtype=float)
    gamma_bar = np.asarray(gamma_bar, dtype=float)
    if gamma_hat.shape != gamma_bar.shape:
        raise DcsslError("gamma_hat and gamma_bar dimension mismatch")
    if blocks.omega.shape != (beta_sl.size, gamma_hat.size):
        raise DcsslError("covariance block dimensions inconsistent with estimates")
    if not (
        np.all(np.isfinite(beta_sl))
        and np.all(np.isfinite(gamma_hat))
        and np.all(np.isfinite(gamma_bar))
    ):
        raise DcsslError("non-finite estimate passed to augment")
    if n is None:
        raise DcsslError("augment needs the labeled size n for the covariance scale")

    diff = gamma_hat - gamma_bar
    correction = blocks.omega @ _solve_sym(blocks.sigma_gamma, diff)
    beta = beta_sl - correction
    shrink = blocks.omega @ _solve_sym(blocks.sigma_gamma, blocks.omega.T)
    cov = (blocks.sigma - (shrink + shrink.T) / 2.0) / n
    se_sl = np.sqrt(np.diag(blocks.sigma) / n)
    return _finish(method, beta, cov, se_sl)


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except DcsslError as exc:
        raise StageError(name, exc) from exc


def _supervised(labeled, cfg):
    """Supervised fit with influence rows; returns (fit, xi, estimate)."""
    n = len(labeled.records)
    em_opts = dict(max_iter=cfg.max_iter, tol=cfg.tol)
    sl_fit = _stage("fit_em_truth_labeled", fit_em, labeled, cfg.r, **em_opts)
    if not sl_fit.converged:
        raise StageError("fit_em_truth_labeled", DcsslError("EM did not converge"))
    xi = _stage("xi_rows", xi_rows, sl_fit, labeled)
    sigma = (xi.T @ xi) / n
    sigma = (sigma + sigma.T) / 2.0
    se_sl = np.sqrt(np.diag(sigma) / n)
    sl_est = _finish(
        "SL",
        sl_fit.beta,
        sigma / n,
        se_sl,
        diagnostics={
            "iterations": sl_fit.iterations,
            "k_grid": sl_fit.grid.k,
            "loglik": float(sl_fit.loglik_trace[-1]),
        },
    )
    return sl_fit, xi, sl_est


def supervised_estimate(labeled, config=None, **overrides):
    """Supervised estimate alone (no augmentation)."""
    cfg = config or SslConfig(**overrides)
    _, _, est = _supervised(labeled, cfg)
    return est


def run_ssl(labeled, unlabeled, config=None, **overrides):
    """Full pipeline: supervised fit plus the enabled augmentations.

    Returns the SL estimate followed by SSL1/SSL2 (per enabled working
    model) and SSL3 when both are enabled.
    """
    cfg = config or SslConfig(**overrides)
    n = len(labeled.records)
    n_unl = len(unlabeled.records) if unlabeled is not None else 0
    if n_unl < 1:
        raise DcsslError("run_ssl needs at least one unlabeled record")
    if n < labeled.p + 2:
        raise DcsslError("labeled size too small for the design")

    from .data import Cohort

    pooled = Cohort(
        list(labeled.records) + list(unlabeled.records), p=labeled.p
    )

    stage = _stage
    em_opts = dict(max_iter=cfg.max_iter, tol=cfg.tol)

    sl_fit, xi, sl_est = _supervised(labeled, cfg)
    out = [sl_est]

    eta1 = gamma1_hat = gamma1_bar = None
    if cfg.use_model4:
        surr_l = labeled.surrogate_view()
        fit_g1 = stage("fit_em_surrogate_labeled", fit_em, surr_l, cfg.r, **em_opts)
        if not fit_g1.converged:
            raise StageError(
                "fit_em_surrogate_labeled", DcsslError("EM did not converge")
            )
        fit_g1_bar = stage(
            "fit_em_surrogate_all", fit_em, pooled.surrogate_view(), cfg.r, **em_opts
        )
        if not fit_g1_bar.converged:
            raise StageError(
                "fit_em_surrogate_all", DcsslError("EM did not converge")
            )
        eta1 = stage("eta1_rows", eta1_rows, fit_g1, labeled)
        gamma1_hat, gamma1_bar = fit_g1.beta, fit_g1_bar.beta
        blocks1 = covariance_blocks(xi, eta1, n, n_unl)
        est1 = augment(
            sl_fit.beta, gamma1_hat, gamma1_bar, blocks1, method="SSL1", n=n
        )
        est1.diagnostics = {
            "gamma_hat": gamma1_hat.tolist(),
            "gamma_bar": gamma1_bar.tolist(),
            "iterations": (fit_g1.iterations, fit_g1_bar.iterations),
        }
        out.append(est1)

    eta2 = gamma2_hat = gamma2_bar = None
    if cfg.use_model5:
        design_l = stage("build_design_labeled", build_design, labeled, cfg.h)
        comp_l = stage("fit_composite_labeled", fit_composite, labeled, design_l)
        if not comp_l.converged:
            raise StageError(
                "fit_composite_labeled",
                DcsslError(f"composite fit not converged: {comp_l.diagnostics}"),
            )
        design_all = stage("build_design_all", build_design, pooled, cfg.h)
        comp_all = stage("fit_composite_all", fit_composite, pooled, design_all)
        if not comp_all.converged:
            raise StageError(
                "fit_composite_all",
                DcsslError(f"composite fit not converged: {comp_all.diagnostics}"),
            )
        eta2 = stage("eta2_rows", eta2_rows, comp_l, labeled, design_l)
        gamma2_hat, gamma2_bar = comp_l.theta[2:], comp_all.theta[2:]
        blocks2 = covariance_blocks(xi, eta2, n, n_unl)
        est2 = augment(
            sl_fit.beta, gamma2_hat, gamma2_bar, blocks2, method="SSL2", n=n
        )
        est2.diagnostics = {
            "gamma_hat": gamma2_hat.tolist(),
            "gamma_bar": gamma2_bar.tolist(),
            "score_norm": (comp_l.score_norm, comp_all.score_norm),
        }
        out.append(est2)

    if cfg.use_model4 and cfg.use_model5:
        eta3 = np.hstack([eta1, eta2])
        gamma3_hat = np.concatenate([gamma1_hat, gamma2_hat])
        gamma3_bar = np.concatenate([gamma1_bar, gamma2_bar])
        blocks3 = covariance_blocks(xi, eta3, n, n_unl)
        est3 = augment(
            sl_fit.beta, gamma3_hat, gamma3_bar, blocks3, method="SSL3", n=n
        )
        out.append(est3)

    return out
