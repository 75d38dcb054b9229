"""Exception hierarchy"""

import typing


class QlidarError(Exception):
    """Base class for all qlidar errors"""


class ConfigError(QlidarError, ValueError):
    """Invalid configuration or out-of-domain input value"""


class ResolutionError(QlidarError, ValueError):
    """The time grid does not span or resolve the signal"""


class HomodyneConditionError(QlidarError, ValueError):
    """A first-order (small detuning) formula was used outside its range"""


class UnsupportedError(QlidarError, ValueError):
    """The requested combination has no implemented formula"""


class NumericalError(QlidarError, RuntimeError):
    """A matrix factorization failed"""

    def __init__(self, message: str,
                 condition: typing.Optional[float] = None) -> None:
        if condition is not None:
            message = f"{message} (condition estimate {condition:.3g})"
        super().__init__(message)
        self.condition = condition


class OutputError(QlidarError, OSError):
    """A result file could not be written or read back"""
