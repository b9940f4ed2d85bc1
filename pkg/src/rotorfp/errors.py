"""Exception hierarchy shared by the library and the CLI."""

from __future__ import annotations


class RotorFPError(Exception):
    """Base class for all errors raised by rotorfp."""


class FormatError(RotorFPError, ValueError):
    """Malformed input stream.

    ``offset`` is a byte offset into the input, ``line`` a 1-based line
    number for text input.
    """

    def __init__(self, message: str, offset: int | None = None, line: int | None = None):
        self.offset = offset
        self.line = line
        if line is not None:
            message = f"{message} (line {line})"
        elif offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)


class ValidationError(RotorFPError, ValueError):
    """Well-formed input whose content violates a data invariant."""


class ContractViolation(RotorFPError, ValueError):
    """A caller broke an operation precondition."""
