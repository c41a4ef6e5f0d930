"""Domain errors raised by the workbench."""
from __future__ import annotations


class WorkbenchError(Exception):
    """Base class for workbench runtime failures."""


class NumericalError(WorkbenchError):
    """A state, output or loss became non-finite."""

    def __init__(self, message: str, **context: object) -> None:
        self.context = context
        if context:
            details = ", ".join(f"{key}={value}" for key, value in context.items())
            message = f"{message} ({details})"
        super().__init__(message)


class EpisodeFinishedError(WorkbenchError):
    """An environment was stepped after its episode ended."""


class ShapeError(WorkbenchError, ValueError):
    """Array shapes do not match what a layer or model expects."""


class StaleCacheError(WorkbenchError):
    """A backward pass was given a cache from before the last parameter update."""


class DetectorNotReadyError(WorkbenchError):
    """A detector was used before it was trained or calibrated."""


class AcceptanceError(WorkbenchError):
    """Evaluation metrics fell below the configured floors."""

    def __init__(self, failures: dict[str, str]) -> None:
        self.failures = failures
        super().__init__("; ".join(f"{name}: {reason}" for name, reason in failures.items()))


class DatasetFormatError(WorkbenchError, ValueError):
    """A dataset file line could not be decoded."""

    def __init__(self, path: str, line: int, field: str, reason: str) -> None:
        self.path = path
        self.line = line
        self.field = field
        super().__init__(f"{path}:{line}: field '{field}' {reason}")
