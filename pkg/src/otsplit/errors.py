"""Exception hierarchy shared by every module."""


class OTSplitError(Exception):
    """Base class for all errors raised by otsplit."""


class DimensionError(OTSplitError, ValueError):
    """Array shapes do not conform to the grid."""


class ValidationError(OTSplitError, ValueError):
    """Input data violates a precondition (negative density, bad flag...)."""


class DegenerateInputError(ValidationError):
    """Input carries no usable information (all-zero density, all-obstacle mask)."""


class DomainError(OTSplitError, ValueError):
    """Argument outside the mathematical domain of an operator."""


class FeasibilityError(OTSplitError, ValueError):
    """The affine constraint set is empty (e.g. unequal masses)."""


class ConfigurationError(OTSplitError, ValueError):
    """Solver parameters violate a convergence condition."""


class SizeError(OTSplitError, ValueError):
    """Problem too large for a dense (oracle) code path."""


class NumericalError(OTSplitError, ArithmeticError):
    """A linear system turned out singular or a factorization failed."""


class ConvergenceError(OTSplitError, RuntimeError):
    """An inner iteration hit its budget. ``estimate`` holds the last value."""

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class DivergenceError(OTSplitError, RuntimeError):
    """A solver blew up. ``record`` holds the telemetry gathered so far."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


class ParseError(OTSplitError, ValueError):
    """Malformed input file. ``offset`` is the byte offset of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
