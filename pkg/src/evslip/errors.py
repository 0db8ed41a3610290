"""Exception hierarchy shared by the library and the CLI.

Each family carries the process exit code the CLI returns for it.
"""

from __future__ import annotations


class EvSlipError(Exception):
    exit_code = 1


class ConfigError(EvSlipError, ValueError):
    exit_code = 2


class IngestError(EvSlipError, ValueError):
    """Base class for event-log ingestion failures."""

    exit_code = 3

    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class MalformedRecord(IngestError):
    pass


class OutOfRange(IngestError):
    pass


class NonMonotonic(IngestError):
    pass


class EmptySample(EvSlipError):
    exit_code = 4


class StageViolation(EvSlipError):
    exit_code = 5


class NoCorners(EvSlipError):
    exit_code = 6


class EmptyAggregate(EvSlipError):
    """No fuzzy rule fired, so there is no centroid to return."""

    exit_code = 7
