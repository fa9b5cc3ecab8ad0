from __future__ import annotations

from typing import Any


class GemFrftError(Exception):
    exit_code = 1

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> dict[str, Any]:
        return {
            'error': type(self).__name__,
            'exit_code': self.exit_code,
            'message': self.message,
            **self.details,
        }


class ConfigError(GemFrftError):
    exit_code = 2


class InvalidParameterError(ConfigError, ValueError):
    pass


class TruncationError(InvalidParameterError):
    """The time grid cannot hold the requested signal without clipping it."""


class NumericalError(GemFrftError):
    exit_code = 3


class LedgerImbalanceError(NumericalError):
    pass


class ResolutionError(NumericalError):
    """Quadratic phase advances by more than pi between samples."""


class WraparoundError(NumericalError):
    pass


class UndefinedEfficiencyError(NumericalError):
    pass


class CalibrationError(NumericalError):
    pass


class DumpFormatError(GemFrftError):
    exit_code = 4


class ChirpBoundWarning(UserWarning):
    pass


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, GemFrftError):
        return exc.exit_code
    if isinstance(exc, OSError):
        return 4
    return 1


def error_payload(exc: BaseException) -> dict[str, Any]:
    if isinstance(exc, GemFrftError):
        return exc.to_dict()
    return {
        'error': type(exc).__name__,
        'exit_code': exit_code_for(exc),
        'message': str(exc),
    }
