"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class DatagenError(Exception):
    """Base class for every error raised by this package."""


class DuplicateId(DatagenError):
    pass


class PlacementConflict(DatagenError):
    pass


class PlacementExhausted(DatagenError):
    """No conflict-free pose found within the attempt budget."""


class ParseError(DatagenError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.line = line
        self.field = field


class ValidationError(DatagenError):
    pass


class PlanValidationError(ValidationError):
    def __init__(self, index: int, message: str):
        super().__init__(f"subtask {index}: {message}")
        self.index = index


class RetrievalError(DatagenError):
    pass


class UnsatisfiableRelation(DatagenError):
    pass


class MissingObject(DatagenError):
    pass


class OutOfBounds(DatagenError):
    pass


class GroundingError(DatagenError):
    pass


class BindingError(DatagenError):
    pass


class TransportError(DatagenError):
    pass


class ProtocolError(DatagenError):
    pass


class GateError(DatagenError):
    pass


class MissingAnnotations(DatagenError):
    pass


class SchemaError(DatagenError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"{message} (line {line})" if line is not None else message)
        self.line = line


class CapExceeded(DatagenError):
    """Episode cap reached before the accepted-count target.

    Carries the partial dataset and its statistics.
    """

    def __init__(self, message: str, dataset=None, stats=None):
        super().__init__(message)
        self.dataset = dataset
        self.stats = stats


class IoError(DatagenError):
    """A dataset or config file could not be read or written."""
