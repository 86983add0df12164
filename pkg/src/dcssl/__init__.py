"""Semi-supervised risk-effect estimation for doubly censored event times."""

__version__ = "0.1.0"

from .augment import AugmentedEstimate, SslConfig, augment, run_ssl, supervised_estimate
from .composite import CompositeFit, DesignV, build_design, fit_composite
from .data import (
    CensoringCode,
    Cohort,
    SubjectRecord,
    derive_observation,
    load_cohort,
    save_cohort,
    split,
)
from .em import EmFit, EStepCache, JumpGrid, e_step, event_grid, fit_em, observed_loglik
from .influence import CovBlocks, InfluenceRows, covariance_blocks, eta1_rows, eta2_rows, xi_rows
from .simulate import MCSummary, SimConfig, gen_cohort, percentiles_tau, run_mc
from .transform import (
    FrailtyKernel,
    TransformParam,
    eps_survival,
    frailty_moments,
    g,
    g_inv,
    g_prime,
    sample_eps,
)

__all__ = [
    "__version__",
    "AugmentedEstimate",
    "CensoringCode",
    "Cohort",
    "CompositeFit",
    "CovBlocks",
    "DesignV",
    "EStepCache",
    "EmFit",
    "FrailtyKernel",
    "InfluenceRows",
    "JumpGrid",
    "MCSummary",
    "SimConfig",
    "SslConfig",
    "SubjectRecord",
    "TransformParam",
    "augment",
    "build_design",
    "covariance_blocks",
    "derive_observation",
    "e_step",
    "eps_survival",
    "eta1_rows",
    "eta2_rows",
    "event_grid",
    "fit_composite",
    "fit_em",
    "frailty_moments",
    "g",
    "g_inv",
    "g_prime",
    "gen_cohort",
    "load_cohort",
    "observed_loglik",
    "percentiles_tau",
    "run_mc",
    "run_ssl",
    "sample_eps",
    "save_cohort",
    "split",
    "supervised_estimate",
    "xi_rows",
]
