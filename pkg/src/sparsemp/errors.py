"""Exception hierarchy shared by all modules.

The CLI maps :class:`ParameterError` to exit code 1 and
:class:`NumericalError` (and subclasses) to exit code 2.
"""


class SparseMPError(Exception):
    """Base class for package errors."""


class ParameterError(SparseMPError, ValueError):
    """Invalid input parameters."""


class DomainError(ParameterError):
    """Spectral parameter outside the supported domain."""


class DataError(ParameterError):
    """Malformed matrix data, e.g. non-finite entries."""


class NumericalError(SparseMPError, ArithmeticError):
    """A numerical routine failed."""


class BranchError(NumericalError):
    """No admissible root of the self-consistent equation was found."""

    def __init__(self, message, roots=None):
        super().__init__(message)
        self.roots = roots


class ConvergenceError(NumericalError):
    """An iteration did not converge."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class QuadratureError(NumericalError):
    def __init__(self, message, bound=None):
        super().__init__(message)
        self.bound = bound


class CacheError(SparseMPError, OSError):
    """Missing or corrupted cache file."""
