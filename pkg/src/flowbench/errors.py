"""Exception types shared across the package."""

from __future__ import annotations


class FlowbenchError(Exception):
    """Base class for all harness errors."""


class SchemaError(FlowbenchError):
    """A table, column, or value violates the declared schema."""


class FixtureError(FlowbenchError):
    """A fixture or task seed document is malformed or inconsistent."""


class DanglingReferenceError(FlowbenchError):
    """A reference value does not point at a live record."""


class RecordNotFoundError(FlowbenchError):
    """A sys_id does not name a live record in the given table."""


class ConditionError(FlowbenchError):
    """A condition or value expression failed to parse or resolve."""

    def __init__(self, message: str, position: int | None = None):
        super().__init__(message if position is None else f"{message} (at {position})")
        self.position = position


class DynamicsError(FlowbenchError):
    """A business rule or workflow definition is invalid or misbehaved."""


class TaskError(FlowbenchError):
    """A task definition is invalid (bad goal, cleanup hits base data, ...)."""


class EpisodeError(FlowbenchError):
    """An episode was driven outside its legal lifecycle."""


class ProtocolError(FlowbenchError):
    """A wire-protocol frame or message is malformed."""
