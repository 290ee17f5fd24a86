"""Custom exception hierarchy for the polyrec recommender."""

from __future__ import annotations

from typing import Iterable, Optional

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class PolyrecError(Exception):
    """Base exception for all polyrec failures."""

    exit_code = EXIT_DATA


class ConfigError(PolyrecError):
    """Raised for unknown config keys or values that fail validation."""

    exit_code = EXIT_USAGE


class UsageError(PolyrecError):
    """Raised when the command line cannot be interpreted."""

    exit_code = EXIT_USAGE


class DimensionError(PolyrecError):
    """Raised when tensor shapes do not agree."""

    def __init__(self, operation: str, *shapes: Iterable[int]) -> None:
        self.operation = operation
        self.shapes = tuple(tuple(shape) for shape in shapes)
        rendered = " vs ".join(str(list(shape)) for shape in self.shapes)
        super().__init__(f"{operation}: incompatible shapes {rendered}")


class InvalidMaskError(PolyrecError):
    """Raised when an attention row has no visible entry."""

    def __init__(self, row: int) -> None:
        self.row = row
        super().__init__(f"attention mask row {row} is fully masked")


class InvalidDistributionError(PolyrecError):
    """Raised when attention weights are not a probability distribution."""

    def __init__(self, row: int, total: float) -> None:
        self.row = row
        self.total = total
        super().__init__(f"row {row} sums to {total:.6f}, expected 1")


class EmptyHistoryError(PolyrecError):
    """Raised when a user has no engaged content to encode."""


class SessionLengthError(PolyrecError):
    """Raised when a session exceeds the encoder's positional capacity."""

    def __init__(self, length: int, limit: int) -> None:
        self.length = length
        self.limit = limit
        super().__init__(f"session of {length} tokens exceeds max_session_tokens={limit}")


class DataFormatError(PolyrecError):
    """Raised for malformed behaviors/catalog/summary files."""

    def __init__(self, path: object, line_number: Optional[int], message: str) -> None:
        self.path = str(path)
        self.line_number = line_number
        location = f"{self.path}:{line_number}" if line_number is not None else self.path
        super().__init__(f"{location}: {message}")


class DuplicateIdError(DataFormatError):
    """Raised when a catalog declares the same content id twice."""


class UnknownIdError(PolyrecError):
    """Raised when a user or content id cannot be resolved."""

    def __init__(self, kind: str, identifier: str) -> None:
        self.kind = kind
        self.identifier = identifier
        super().__init__(f"unknown {kind} id: {identifier}")


class UndefinedMetricError(PolyrecError):
    """Raised when a metric is undefined for an impression (e.g. one class only)."""


class CheckpointError(PolyrecError):
    """Raised for corrupt manifests, blob length or shape mismatches."""


class ConfigMismatchError(CheckpointError):
    """Raised when a checkpoint was written under a different model config."""

    def __init__(self, differences: dict) -> None:
        self.differences = dict(differences)
        rendered = ", ".join(
            f"{key}: checkpoint={saved!r} model={current!r}"
            for key, (saved, current) in sorted(self.differences.items())
        )
        super().__init__(f"checkpoint config mismatch ({rendered})")


class NumericalError(PolyrecError):
    """Raised for non-finite losses and failed gradient checks."""

    exit_code = EXIT_NUMERICAL


class SummaryBackendError(PolyrecError):
    """Base class for user-interest summary backend failures."""


class SummaryAuthorizationError(SummaryBackendError):
    """Raised when the summary service rejects our bearer token."""


class SummaryApiError(SummaryBackendError):
    """Raised for non-successful HTTP responses or unusable payloads."""

    def __init__(self, status_code: int, message: Optional[str] = None) -> None:
        self.status_code = status_code
        self.message = message or "summary service error"
        super().__init__(f"{self.message} (status={status_code})")


class SummaryRequestError(SummaryBackendError):
    """Raised for network/transport errors after all retries are spent."""

    retriable = True

    def __init__(self, message: str, attempts: int) -> None:
        self.attempts = attempts
        super().__init__(f"{message} (attempts={attempts})")
