"""Exception taxonomy shared by all modules.

Configuration and usage mistakes raise subclasses of ValueError; numerical
failures discovered at run time raise subclasses of RuntimeError.  The CLI
maps the former to exit code 2 and the latter to exit code 3.
"""


class ConfigurationError(ValueError):
    """Invalid configuration value (grid size, degree list, descriptor...)."""


class UsageError(ValueError):
    """Operation called with arguments that violate its contract."""


class DomainError(ValueError):
    """Point outside the domain of a chart transition."""


class InvalidFieldError(ValueError):
    """Scalar field with NaN/inf entries where finite values are required."""


class InadmissibleWeightError(ValueError):
    """Radial weight whose asymptotic slopes are not (0, 1)."""


class NumericError(RuntimeError):
    """Overflow/underflow or loss of significance beyond repair."""


class ConditioningError(NumericError):
    """Gram matrix too ill-conditioned to orthonormalize."""

    def __init__(self, message: str, gram_cond: float):
        super().__init__(message)
        self.gram_cond = gram_cond


class SolverQualityError(NumericError):
    """Converged iterate violates a posteriori quality bounds."""


class IllConditionedSampleError(NumericError):
    """Random section whose roots cannot be certified."""
