from __future__ import annotations


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of an operation."""


class NumericalError(ArithmeticError):
    """Raised when a numerical procedure cannot produce a finite result.

    ``partial`` optionally holds whatever the procedure had computed before
    it aborted (e.g. the theta history of an interrupted EM run).
    """

    def __init__(self, message: str, partial: dict | None = None):
        self.partial = partial
        super().__init__(message)


class ConfigError(DomainError):
    """Malformed or unknown configuration input; carries the line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)
