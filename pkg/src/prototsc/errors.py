from __future__ import annotations

import typing as t


class PrototscError(Exception):
    """Base class of every error raised by this library. The command line turns
    any of these into a single line ``error: <prefix>: <message>``.

    :param message: Human readable description of the problem.
    """

    prefix: t.ClassVar[str] = "error"
    """Short machine-parsable category shown by the command line."""

    def __init__(self, message: str) -> None:
        super().__init__(message)
        self.message = message


class ShapeError(PrototscError):
    """Operand shapes do not conform for an operation.

    :param op: Name of the operation.
    :param left: Shape of the first operand, or the expected shape.
    :param right: Shape of the second operand, or the actual shape.
    """

    prefix = "shape"

    def __init__(
        self, op: str, left: tuple[int, ...], right: tuple[int, ...], detail: str = ""
    ) -> None:
        message = f"{op}: incompatible shapes {tuple(left)} and {tuple(right)}"

        if detail:
            message = f"{message} ({detail})"

        super().__init__(message)
        self.op = op
        self.left = tuple(left)
        self.right = tuple(right)


class NumericError(PrototscError):
    """A computation produced NaN or infinite values, or was asked to do something
    numerically undefined such as normalizing a zero vector.
    """

    prefix = "numeric"


class ParseError(PrototscError):
    """A dataset file could not be parsed.

    :param message: What went wrong.
    :param line: 1-based line number in the source text, if known.
    """

    prefix = "parse"

    def __init__(self, message: str, line: int | None = None) -> None:
        if line is not None:
            message = f"line {line}: {message}"

        super().__init__(message)
        self.line = line


class DataError(PrototscError):
    """A dataset does not satisfy the requirements of an operation."""

    prefix = "data"


class SchemaError(PrototscError):
    """A checkpoint or report file does not have the expected structure or
    ``format_version``.
    """

    prefix = "schema"


class UsageError(PrototscError):
    """The command line was called with an unknown flag or invalid arguments."""

    prefix = "usage"
