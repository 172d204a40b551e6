"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes, so each family stays distinct:
validation problems, numerical divergence and file/format problems.
"""


class ECDiscoveryError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ValidationError(ECDiscoveryError, ValueError):
    exit_code = 2


class DegenerateFieldError(ValidationError):
    """A field with a single distinct value cannot be standardized."""


class UnsupportedDimensionError(ValidationError):
    pass


class ConfigurationError(ValidationError):
    pass


class ConvergenceError(ECDiscoveryError, RuntimeError):
    """An iterative solver stopped before reaching its tolerance."""

    exit_code = 3


class SimulationDiverged(ECDiscoveryError, ArithmeticError):
    """A PDE integration produced non-finite values.

    The seed of the offending instance is kept so the caller can redraw.
    """

    exit_code = 3

    def __init__(self, message, seed=None):
        super().__init__(message)
        self.seed = seed


class FormatError(ECDiscoveryError, OSError):
    exit_code = 4


class BadMagicError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


class ShapeMismatchError(FormatError):
    pass


class CompatibilityError(FormatError):
    """A stored artifact does not match what the caller expects (version, grid length)."""
