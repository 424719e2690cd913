"""
Exception hierarchy.
Data problems raise a UstarError subclass; the CLI maps them to exit code 2.
"""

from typing import Optional


class UstarError(Exception):
    """Base class for every data-level failure."""


class ConfigError(UstarError):
    """Invalid or missing configuration (CLI exit code 1)."""


class ParseError(UstarError):
    """A stream line could not be decoded."""

    def __init__(self, message: str, line_no: Optional[int] = None):
        self.line_no = line_no
        prefix = f"line {line_no}: " if line_no is not None else ""
        super().__init__(f"{prefix}{message}")


class ValidationError(UstarError):
    """A decoded record violates a field invariant."""


class OutOfBoundsError(UstarError):
    """A coordinate falls outside the grid's bounding box."""


class GridError(UstarError):
    """Degenerate bbox, cell size or time-bin setting."""


class SnapshotError(UstarError):
    """Snapshot file is corrupt, truncated or inconsistent."""

    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        suffix = f" (at byte offset {offset})" if offset is not None else ""
        super().__init__(f"{message}{suffix}")


class SamplerError(UstarError):
    """Buffer operation that cannot be carried out (e.g. empty buffer)."""


class GeoError(UstarError):
    """Weak geolocation inference cannot proceed (e.g. empty distribution)."""


class TrainingError(UstarError):
    """A training update was requested on an inconsistent record."""
