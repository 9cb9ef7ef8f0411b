"""Exception hierarchy for sflab"""

from typing import Any, Optional


class SflabError(Exception):
    """Base class for every error raised by sflab"""


class InvalidInputError(SflabError):
    """Input violates a precondition (shape, finiteness, parameter range)"""


class CapacityError(SflabError):
    """Requested dimension exceeds a configured maximum"""


class DegenerateConfigurationError(SflabError):
    """Sampling could not produce a configuration meeting its constraints"""


class DatasetParseError(SflabError):
    """Malformed dataset or checkpoint document"""

    def __init__(self, message: str, record: Optional[int] = None):
        if record is not None:
            message = f"record {record}: {message}"
        super().__init__(message)
        self.record = record


class NormalizationError(DatasetParseError):
    """An input point is not on the unit sphere"""


class OrthonormalityError(DatasetParseError):
    """A direction frame does not have orthonormal columns"""


class AssumptionViolationError(SflabError):
    """A bound was requested for data outside its assumptions"""


class DivergenceError(SflabError):
    """Training produced a non-finite loss"""

    def __init__(self, message: str, last_record: Any = None):
        super().__init__(message)
        self.last_record = last_record


class StepSizeError(SflabError):
    """Step size above the stability cap, or loss increased along a step"""

    def __init__(self, message: str, eta: float, cap: float):
        super().__init__(f"{message} (eta={eta:.6g}, cap={cap:.6g})")
        self.eta = eta
        self.cap = cap


class InsufficientDataError(SflabError):
    """A monitor was called without the logged quantities it needs"""
