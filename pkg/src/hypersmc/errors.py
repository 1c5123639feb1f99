"""Exception types shared across the package."""


class DegeneratePopulationError(RuntimeError):
    """All importance weights vanished.

    Carries the iteration, exponent and log-weight spread at the point of
    failure so the caller can report a useful diagnostic.
    """

    def __init__(self, message, iteration=None, alpha=None, log_weight_spread=None):
        super().__init__(message)
        self.iteration = iteration
        self.alpha = alpha
        self.log_weight_spread = log_weight_spread


class ModelEvaluationError(RuntimeError):
    """A model density returned NaN."""


class DomainError(ValueError):
    """Argument outside the natural parameter domain."""


class SupportError(ValueError):
    """A hyper-prior support is not covered by the explored hyper-parameter grid."""


class MissingSnapshotError(ValueError):
    """A stored trace lacks the particle snapshots an analysis needs."""
