"""Exception hierarchy.

Two families matter to callers: :class:`DomainError` (bad inputs, exit code 1
in the CLI) and :class:`NumericalError` (a computation that could not reach
its tolerance, exit code 2).
"""

from __future__ import annotations


class ErrorCalcError(Exception):
    """Base class for all package errors."""


class DomainError(ErrorCalcError, ValueError):
    """A point lies outside the declared parameter or image domain."""


class BoundaryError(DomainError):
    """A finite-difference stencil would leave the domain."""


class PreconditionError(ErrorCalcError, ValueError):
    """A caller-declared property (injectivity, contraction, ...) does not hold."""


class ConfigError(ErrorCalcError, ValueError):
    """Invalid experiment configuration; ``key`` names the offending entry."""

    def __init__(self, message: str, key: str | None = None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class NumericalError(ErrorCalcError, ArithmeticError):
    """A numerical routine failed to converge."""

    def __init__(self, message: str, achieved: float | None = None):
        self.achieved = achieved
        if achieved is not None:
            message = f"{message} (achieved tolerance {achieved:.3g})"
        super().__init__(message)


class EvaluationError(NumericalError):
    """A density evaluated to a non-finite value."""

    def __init__(self, message: str, x=None, theta=None):
        self.x = x
        self.theta = theta
        super().__init__(f"{message} at x={x!r}, theta={theta!r}")


class RegularityError(NumericalError):
    """Fisher information is singular or not positive semi-definite."""


class NonNormalizableError(NumericalError):
    """A prior normalising constant diverges."""


class NoRootError(NumericalError):
    """The aggregate score has no sign change on the bracket."""


class InsufficientDataError(NumericalError):
    """Too few effective samples for a kernel or rejection estimate."""


class SimulationError(NumericalError):
    """Too many failed replications in a Monte Carlo run."""
