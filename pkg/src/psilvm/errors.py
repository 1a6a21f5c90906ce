"""Exception types raised across the package."""


class PsilvmError(Exception):
    pass


class NotPositiveDefinite(PsilvmError, ValueError):
    pass


class DimensionMismatch(PsilvmError, ValueError):
    pass


class OrderTooLarge(PsilvmError, ValueError):
    """Raised when a tensor-product quadrature grid exceeds the evaluation cap."""

    def __init__(self, order, dim, cap):
        self.order, self.dim, self.cap = order, dim, cap
        super().__init__(f"gh:{order} in D={dim} needs {order}**{dim} points (cap {cap})")


class WrongKernelKind(PsilvmError, ValueError):
    pass


class OptimizerDiverged(PsilvmError, RuntimeError):
    """Non-finite objective during optimisation. ``last_good`` holds the best finite state."""

    def __init__(self, message, last_good=None, trace=None):
        super().__init__(message)
        self.last_good = last_good
        self.trace = trace


class SeriesTooShort(PsilvmError, ValueError):
    pass


class DegenerateData(PsilvmError, ValueError):
    pass


class NoArdKernel(PsilvmError, ValueError):
    pass


class TooFewSamples(PsilvmError, ValueError):
    pass


class LengthMismatch(PsilvmError, ValueError):
    pass


class NonPositiveVariance(PsilvmError, ValueError):
    pass


class ParseError(PsilvmError, ValueError):
    def __init__(self, message, line=None, column=None):
        self.line, self.column = line, column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + where)


class RaggedRows(PsilvmError, ValueError):
    pass


class NonMonotoneTime(PsilvmError, ValueError):
    pass


class ClassTooSmall(PsilvmError, ValueError):
    pass


class ConfigError(PsilvmError, ValueError):
    pass
