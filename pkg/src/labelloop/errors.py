"""Shared exception types."""


class LabelLoopError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(LabelLoopError):
    """Malformed input data; carries the offending line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConflictError(LabelLoopError):
    """An operation collided with existing state (duplicate ids, double labels)."""


class ValidationError(LabelLoopError):
    """Inputs violate a documented precondition or invariant."""


class EncodingError(LabelLoopError):
    """Text could not be embedded (empty input, zero-norm vector, unknown key)."""


class CacheMismatchError(LabelLoopError):
    """An embedding cache was created for a different encoder."""


class StrategyUnavailableError(LabelLoopError):
    """The requested acquisition strategy cannot run on the current state."""
