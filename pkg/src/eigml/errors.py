"""Exception hierarchy for eigml."""


class EigmlError(Exception):
    """Base class for all eigml errors."""


class DomainError(EigmlError):
    """A parameter vector lies outside the model's admissible domain."""


class LevelRangeError(EigmlError):
    """A discretization level outside the configured range was requested."""


class DecompositionError(EigmlError):
    """A matrix factorization (Cholesky, LU) failed on supposedly SPD input."""


class HessianNotSPDError(DecompositionError):
    """The Gauss-Newton Hessian is singular or indefinite.

    Carries ``null_direction``, the eigenvector of the smallest eigenvalue,
    to help diagnose which parameter combination is unidentified.
    """

    def __init__(self, msg, null_direction=None):
        super().__init__(msg)
        self.null_direction = null_direction


class MapConvergenceError(EigmlError):
    """The posterior-mode search did not reach its gradient tolerance.

    Carries the best iterate and the final projected-gradient norm.
    """

    def __init__(self, msg, theta_best=None, grad_norm=None):
        super().__init__(msg)
        self.theta_best = theta_best
        self.grad_norm = grad_norm


class EvidenceUnderflowError(EigmlError):
    """Every inner-sample term of an evidence estimate carried zero mass.

    This is a structural zero (all proposal draws outside the prior
    support), not floating-point underflow, which the log-sum-exp
    reduction prevents.
    """


class EstimatorError(EigmlError):
    """An estimator run failed its own sanity constraints (e.g. too many
    rejected outer samples)."""


class RateEstimationError(EigmlError):
    """Pilot-run rate fitting failed.

    ``degenerate`` is True when every telescoped difference was exactly
    zero (level-independent model), False when the mean decay simply did
    not resolve above noise.
    """

    def __init__(self, msg, degenerate=False):
        super().__init__(msg)
        self.degenerate = degenerate


class ResourceLimitError(EigmlError):
    """A run would exceed a configured resource cap (e.g. finest level)."""


class IndexSetError(EigmlError):
    """A multi-index set violates downward-closedness."""


class ConfigError(EigmlError):
    """Invalid run configuration; ``field`` names the offending entry."""

    def __init__(self, field, msg):
        super().__init__(f"{field}: {msg}")
        self.field = field
