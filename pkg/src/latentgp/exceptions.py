"""Exception types shared across the package."""


class ContractError(ValueError):
    """A caller violated an input contract (shapes, ranges, layouts)."""


class NumericalSingularityError(ArithmeticError):
    """Covariance factorization failed even after jitter escalation."""

    def __init__(self, message, jitter_ladder=()):
        super().__init__(message)
        self.jitter_ladder = tuple(jitter_ladder)


class TrainingFailedError(RuntimeError):
    """Every optimization restart failed."""

    def __init__(self, message, diagnostics=()):
        super().__init__(message)
        self.diagnostics = list(diagnostics)


class MetricUndefinedError(ValueError):
    """A normalized metric was requested for responses with zero spread."""
