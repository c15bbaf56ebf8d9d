"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of a density or generating function."""


class DegenerateDistributionError(ValueError):
    """A zero volatility collapses a law to a point mass.

    The deterministic value, when there is one, is carried in ``value``.
    """

    def __init__(self, message, value=None):
        super().__init__(message)
        self.value = value


class EstimationFailedError(RuntimeError):
    """A statistical estimator could not produce a usable estimate."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
