"""Shared exception types and small input-validation helpers."""

from __future__ import annotations


class ValidationError(ValueError):
    """Input data or configuration violates a documented invariant."""


class ParseError(ValidationError):
    """A document is malformed. ``field`` names the offending entry."""

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(message if field is None else f"{field}: {message}")


class ContractViolation(RuntimeError):
    """A caller broke an internal precondition (a bug, not bad input data)."""


def require(condition: bool, message: str, field: str | None = None) -> None:
    """Raise ValidationError with ``message`` unless ``condition`` holds."""
    if not condition:
        raise ValidationError(message if field is None else f"{field}: {message}")
