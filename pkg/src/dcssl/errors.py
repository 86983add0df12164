"""Exception types shared across the package."""


class DcsslError(Exception):
    """Base class for all package errors."""


class DataError(DcsslError):
    """Invalid cohort data: schema problems, invariant violations, bad rows."""


class EmError(DcsslError):
    """EM / NPMLE fitting failure (non-convergence, degenerate input)."""

    def __init__(self, message, *, beta=None, grad_norm=None):
        super().__init__(message)
        self.beta = beta
        self.grad_norm = grad_norm


class CompositeError(DcsslError):
    """Composite logistic+Cox fitting failure."""


class InfluenceError(DcsslError):
    """Influence-function computation failure (singular curvature etc.)."""


class StageError(DcsslError):
    """Failure of one stage of the semi-supervised pipeline."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class McError(DcsslError):
    """Monte Carlo run failure (e.g. replication failure rate above gate)."""
