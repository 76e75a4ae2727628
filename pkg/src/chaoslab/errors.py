"""Exception hierarchy shared by every chaoslab module.

The CLI maps the three base classes to exit codes: ``ConfigError`` -> 2,
``NumericalFailure`` -> 3, ``IoError`` -> 4.
"""

from __future__ import annotations


class ChaoslabError(Exception):
    """Base class for all errors raised by chaoslab."""


class ConfigError(ChaoslabError, ValueError):
    """Invalid parameter or configuration value."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        prefix = ""
        if field:
            prefix = f"{field}: "
        suffix = f" (line {line})" if line is not None else ""
        super().__init__(f"{prefix}{message}{suffix}")
        self.message = message


class NumericalFailure(ChaoslabError):
    """Base class for failures detected while integrating or fitting."""


class CflViolation(NumericalFailure):
    pass


class NumericalError(NumericalFailure):
    pass


class DomainTooSmall(NumericalFailure):
    pass


class OutOfDomain(NumericalFailure):
    pass


class DegenerateFit(NumericalFailure):
    pass


class GridMismatch(ChaoslabError, ValueError):
    pass


class LengthMismatch(ChaoslabError, ValueError):
    pass


class IoError(ChaoslabError, OSError):
    pass


class RefusesOverwrite(IoError):
    pass
