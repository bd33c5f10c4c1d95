"""Exception hierarchy shared by every harness module."""

from __future__ import annotations


class ArenaError(Exception):
    """Base class for domain errors (CLI maps these to exit code 1)."""


class VnnSyntaxError(ArenaError):
    """Malformed input text, located by line and column when known."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        if line is not None:
            loc = f"{line}:{column}" if column is not None else f"{line}"
            message = f"{loc}: {message}"
        super().__init__(message)


class UnsupportedFeature(VnnSyntaxError):
    """Well-formed input that uses something outside the supported subset."""


class InvalidQuery(ArenaError):
    pass


class DimensionMismatch(ArenaError):
    pass


class DecodeError(ArenaError):
    """Malformed protobuf wire data."""


class UnsupportedOperator(ArenaError):
    def __init__(self, op_type: str, detail: str = ""):
        self.op_type = op_type
        msg = f"unsupported operator {op_type!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class ShapeError(ArenaError):
    pass


class MalformedWitness(ArenaError):
    pass


class MissingFile(ArenaError):
    pass


class ToolFailure(ArenaError):
    pass


class ConfigError(ArenaError):
    pass
