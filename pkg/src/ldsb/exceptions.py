"""Exception hierarchy shared across the package."""


class LdsbError(Exception):
    """Base class for all errors raised by ldsb."""


class InvalidInput(LdsbError, ValueError):
    pass


class ShapeError(LdsbError, ValueError):
    pass


class DegenerateBasis(LdsbError, ValueError):
    pass


class InvalidSpec(LdsbError, ValueError):
    pass


class TooLarge(LdsbError, ValueError):
    pass


class ParseError(LdsbError, ValueError):
    """Malformed dataset or checkpoint file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UndefinedRank(LdsbError, ValueError):
    pass


class InvalidRank(LdsbError, ValueError):
    pass


class DegenerateLogits(LdsbError, RuntimeError):
    pass


class DegenerateLabels(LdsbError, RuntimeError):
    pass


class InsufficientData(LdsbError, ValueError):
    pass


class DomainError(LdsbError, ValueError):
    pass


class InternalInconsistency(LdsbError, RuntimeError):
    pass


class NoCrossing(LdsbError, ValueError):
    pass


class DivergenceError(LdsbError, RuntimeError):
    """Training produced a non-finite loss.

    ``log`` holds the records collected up to the last finite evaluation.
    """

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log


class ConvergenceWarning(UserWarning):
    pass
