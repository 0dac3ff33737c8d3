"""Exception hierarchy shared by all modules."""


class KBError(Exception):
    """Base class for every error raised by this package."""


class InputError(KBError, ValueError):
    """Malformed or inconsistent input (wrong shapes, bad flags, grid mismatch)."""


class DomainError(KBError, ValueError):
    """Input outside the mathematical domain of an operation."""

    def __init__(self, message, *, lambda_min=None, index=None):
        super().__init__(message)
        self.lambda_min = lambda_min
        self.index = index


class PreconditionError(KBError, ValueError):
    """A documented precondition (e.g. commuting endpoints) does not hold."""


class NumericError(KBError, ArithmeticError):
    """An iteration diverged, produced NaN, or failed to converge."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class FormatError(KBError, ValueError):
    """A measure file could not be decoded."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset
