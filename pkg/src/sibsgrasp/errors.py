"""Exception hierarchy shared by all sibsgrasp modules."""


class SibsError(Exception):
    """Base class for every error raised by this package."""


class EmptyInput(SibsError, ValueError):
    pass


class InsufficientPoints(SibsError, ValueError):
    pass


class DegenerateNeighborhood(SibsError, ValueError):
    pass


class ParseError(SibsError, ValueError):
    """Malformed configuration text.

    ``line`` is 1-based when known, ``field`` names the offending key path.
    """

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)


class ValidationError(SibsError, ValueError):
    """Well-formed input that violates a model invariant.

    ``invariant`` is a short machine-readable tag such as ``"cycle"``.
    """

    def __init__(self, message, invariant=None):
        self.invariant = invariant
        super().__init__(message)


class ChartOverflow(SibsError, ValueError):
    pass


class EmptyCrop(SibsError, ValueError):
    pass


class NoSurface(SibsError):
    pass


class FormatError(SibsError, ValueError):
    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")


class CannotOptimize(SibsError):
    pass


class BadInit(SibsError):
    pass


class OptimizationFailed(SibsError):
    def __init__(self, message, diagnostics=None):
        self.diagnostics = list(diagnostics or [])
        super().__init__(message)


class AllItemsFailed(SibsError):
    """Every item of a batch command failed; ``failures`` holds ``(item, reason)`` pairs."""

    def __init__(self, message, failures=None):
        self.failures = list(failures or [])
        super().__init__(message)


class InputChanged(SibsError):
    """A manifest input no longer matches its recorded hash."""
