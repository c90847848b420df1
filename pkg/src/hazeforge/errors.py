"""Exception types shared across hazeforge."""
from __future__ import annotations


class HazeforgeError(Exception):
    pass


class DimensionError(HazeforgeError, ValueError):
    """Operand shapes are incompatible with the operation."""


class PreconditionError(HazeforgeError, ValueError):
    """An argument lies outside the admissible range."""


class ConfigError(HazeforgeError, ValueError):
    """A configuration is malformed or inconsistent."""


class ContractError(HazeforgeError, RuntimeError):
    """An API was called in a state it does not support."""


class FormatError(HazeforgeError, ValueError):
    """A file does not match the expected on-disk format."""


class TrainingError(HazeforgeError, RuntimeError):
    """Training diverged (non-finite loss); ``step`` is the 0-based optimizer step."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step
