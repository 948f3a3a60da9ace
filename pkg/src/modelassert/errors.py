"""Exception types shared across the package."""

from __future__ import annotations


class ConfigError(ValueError):
    """Bad configuration or arguments (CLI exit code 1)."""


class RegistryError(ValueError):
    pass


class IngestError(ValueError):
    """Malformed input (CLI exit code 2)."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class StreamError(ValueError):
    """A stream violates ordering or variant invariants."""


class EditConflictError(ValueError):
    def __init__(self, conflicts):
        self.conflicts = list(conflicts)
        lines = "; ".join(str(c) for c in self.conflicts)
        super().__init__(f"conflicting edits: {lines}")


class InvariantError(RuntimeError):
    """Internal invariant failure (CLI exit code 3)."""
