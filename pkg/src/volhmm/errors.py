"""Exception types shared across the package.

Validation problems (bad arguments, malformed configs/files) raise ValueError
subclasses; numerical breakdowns raise NumericalError subclasses. The CLI maps
the former to exit code 2 and the latter to exit code 3.
"""


class ValidationError(ValueError):
    """Invalid argument, config, or file content."""


class NumericalError(RuntimeError):
    """Numerical procedure failed (non-convergence, impossible data, caps)."""


class NonConvergenceError(NumericalError):
    """An iterative routine hit its iteration cap before converging."""


class ZeroLikelihoodError(NumericalError):
    """A filter step assigned zero probability to an observed symbol."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class EnumerationCapError(NumericalError):
    """A combinatorial enumeration exceeded its configured resource cap."""
