"""Exception hierarchy shared by the whole package.

CLI exit codes: UsageError -> 2, DataError (and subclasses) -> 3,
NumericalError -> 4.
"""


class EfveError(Exception):
    """Base class for all package errors."""


class UsageError(EfveError):
    """Bad invocation: unknown flags, unreadable paths, wrong argument combos."""


class DataError(EfveError):
    """Malformed or inconsistent input data."""


class LayoutError(DataError):
    """Latent/StyleSpace shape disagrees with the backend's declared layout."""


class ValidationError(DataError):
    """Value-level contract violation (non-finite entries, bad lengths, ...)."""


class BitstreamError(DataError):
    """Structured parse error for .efve containers."""

    def __init__(self, message, offset=None, frame_index=None):
        super().__init__(message)
        self.offset = offset
        self.frame_index = frame_index

    def __str__(self):
        base = super().__str__()
        parts = []
        if self.offset is not None:
            parts.append(f"byte offset {self.offset}")
        if self.frame_index is not None:
            parts.append(f"frame {self.frame_index}")
        return f"{base} ({', '.join(parts)})" if parts else base


class NumericalError(EfveError):
    """Optimization produced non-finite values or diverged irrecoverably."""
