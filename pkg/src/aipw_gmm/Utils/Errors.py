"""
Exception hierarchy. Every error raised on purpose by the package derives from AipwGmmError so the CLI can
map it to an exit code; the ValueError subclasses keep plain `except ValueError` callers working.
"""

from typing import Optional


class AipwGmmError(Exception):
    """Base class for all package errors."""


class ConfigurationError(AipwGmmError, ValueError):
    """Invalid option, sieve specification or simulation scenario."""


class MissingValueError(AipwGmmError, ValueError):
    """A fully observed quantity was requested from an observation where it is missing."""


class PatternSupportError(AipwGmmError):
    """A missingness pattern needed by the current mode has no observations."""

    def __init__(self, missing_patterns, mode: str = "strict", message: str = ""):
        self.missing_patterns = tuple(missing_patterns)
        self.mode = mode
        if not message:
            message = (
                f"No observations in pattern(s) {', '.join(self.missing_patterns)} (pattern mode '{mode}'). "
                "The strict estimator needs all four patterns; use the general pattern mode for data with "
                "no missingness or a monotone pattern."
            )
        super().__init__(message)


class FullyObservedViolation(AipwGmmError, ValueError):
    """An instrument or covariate value is missing."""


class ParseError(AipwGmmError, ValueError):
    """A data cell could not be parsed as a number, or the file itself is not well-formed CSV."""

    def __init__(self, line: int, column: Optional[str] = None, value: Optional[str] = None, message: str = ""):
        self.line = line
        self.column = column
        self.value = value
        if not message:
            message = f"Line {line}, column '{column}': cannot parse {value!r} as a number."
        super().__init__(message)


class IdentificationError(AipwGmmError):
    """The moment Jacobian or the instrument matrix is rank deficient."""


class UnsupportedModelError(AipwGmmError):
    """The structural model cannot be integrated against the imputed treatment distribution."""


class InvariantViolation(AipwGmmError, AssertionError):
    """An internal consistency check failed."""
