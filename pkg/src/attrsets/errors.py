"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration problems exit with 2,
verification failures with 1, anything else that goes wrong at runtime
with 3.
"""


class AttrsetsError(Exception):
    """Base class for all package-specific errors."""


class DomainError(AttrsetsError, ValueError):
    """An argument lies outside its mathematical domain."""


class ConfigError(AttrsetsError, ValueError):
    """A configuration is internally inconsistent or infeasible."""


class DegenerateCoefficientError(AttrsetsError, ArithmeticError):
    """The inverse-weighting coefficient is not strictly positive.

    Happens when the tail probabilities underflow to zero (window far
    beyond the feasible conversion count). Callers are expected to drop
    the offending window positions via the low-weight filter rather than
    clamp the coefficient.
    """


class EmptyFilterError(AttrsetsError, ValueError):
    """The low-weight position filter removed every window position."""


class TruncationWarning(UserWarning):
    """Fewer conversions were realized than the aggregation range expects."""


class DivergenceError(AttrsetsError, ArithmeticError):
    """The training objective became non-finite."""

    def __init__(self, step: int, value: float):
        self.step = step
        self.value = value
        super().__init__(f"objective became non-finite ({value!r}) at step {step}")


class DatasetError(AttrsetsError, ValueError):
    """A dataset file failed to parse or violates its declared schema."""
