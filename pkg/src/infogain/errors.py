"""Exception hierarchy for infogain.

Every error carries a ``details`` dict naming the offending entity, which the
CLI serializes into the machine-readable error JSON on stderr.
"""

from typing import Any


class InfogainError(Exception):
    """Base class for all errors raised by the library."""

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details

    def __str__(self) -> str:
        return self.message

    def to_dict(self) -> dict[str, Any]:
        return {
            "error": type(self).__name__,
            "message": self.message,
            "details": {k: _jsonable(v) for k, v in self.details.items()},
        }


def _jsonable(value: Any) -> Any:
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return str(value)


# --- density ---


class AllZeroError(InfogainError, ValueError):
    pass


class NegativeValueError(InfogainError, ValueError):
    pass


class NonFiniteError(InfogainError, ValueError):
    pass


class NegativeSigmaError(InfogainError, ValueError):
    pass


class EmptyPointsError(InfogainError, ValueError):
    pass


class ZeroDensityAtFixationError(InfogainError, ValueError):
    pass


class ImageMismatchError(InfogainError, ValueError):
    pass


class DegenerateBoundsError(InfogainError, ValueError):
    pass


# --- baselines ---


class SingleImageError(InfogainError, ValueError):
    pass


class EmptyGridsError(InfogainError, ValueError):
    pass


class TooFewSubjectsError(InfogainError, ValueError):
    pass


class MissingGridError(InfogainError, KeyError):
    pass


# --- calibration ---


class ConstantModelError(InfogainError, ValueError):
    pass


class OutOfSupportError(InfogainError, ValueError):
    pass


# --- metrics / maps ---


class EmptyListError(InfogainError, ValueError):
    pass


class SupportViolationError(InfogainError, ValueError):
    pass


class ZeroPriorError(InfogainError, ValueError):
    pass


class DegenerateAnchorsError(InfogainError, ValueError):
    pass


class ConstantVectorError(InfogainError, ValueError):
    pass


# --- io ---


class MalformedHeaderError(InfogainError, ValueError):
    pass


class MalformedRowError(InfogainError, ValueError):
    pass


class ValidationFailedError(InfogainError, ValueError):
    pass


class BadMagicError(InfogainError, ValueError):
    pass


class TruncatedFileError(InfogainError, ValueError):
    pass


class VersionUnsupportedError(InfogainError, ValueError):
    pass


class ConfigError(InfogainError, ValueError):
    pass


class MissingMapError(InfogainError, FileNotFoundError):
    pass


# --- reporting ---


class MissingArtifactError(InfogainError, KeyError):
    pass
