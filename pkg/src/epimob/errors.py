"""Shared exception types."""


class EpimobError(Exception):
    """Base class for all package errors."""


class InvalidInputError(EpimobError):
    """A caller-supplied value violates a precondition."""


class ParseError(EpimobError):
    """A row or document could not be parsed; carries location info."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NotFoundError(EpimobError):
    """A referenced dataset/job/result does not exist."""


class IntegrityError(EpimobError):
    """A persisted record failed its checksum or length check."""


class CapacityError(EpimobError):
    """A job exceeds the configured compute budget."""
