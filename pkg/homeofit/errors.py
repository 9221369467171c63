"""
Error hierarchy
===============

Every failure raised by the numerical core carries a machine-readable
``error_type`` and the process exit code the harness maps it to.
"""
from typing import Optional


class HomeofitError(Exception):
    """Base class for all library errors"""

    error_type: str = "homeofit-error"
    exit_code: int = 2

    def __init__(self, message: str, error_type: Optional[str] = None):
        super().__init__(message)
        if error_type is not None:
            self.error_type = error_type


class PreconditionError(HomeofitError):
    error_type = "precondition"


class ParameterError(HomeofitError):
    error_type = "invalid-parameter"


class UsageError(HomeofitError):
    error_type = "usage"


class ConstantFunctionError(PreconditionError):
    error_type = "constant-function"


class NotAlternatingError(PreconditionError):
    error_type = "not-alternating"


class NotSingleExtremumError(PreconditionError):
    error_type = "not-single-extremum"


class OutOfRangeError(PreconditionError):
    error_type = "out-of-range"


class RangeMismatchError(PreconditionError):
    error_type = "range-mismatch"


class InternalConsistencyError(HomeofitError):
    error_type = "internal-consistency"


class SingularSystemError(HomeofitError):
    """Least-squares system whose numerical rank is below its column count"""

    error_type = "singular-system"

    def __init__(self, message: str, rank: int):
        super().__init__(message)
        self.rank = rank


class ConvergenceError(HomeofitError):
    """Iterative solver stopped without meeting its tolerance"""

    error_type = "convergence"

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


class NumericError(HomeofitError):
    error_type = "non-finite"


class EmptyDatasetError(HomeofitError):
    error_type = "empty-dataset"


class DatasetParseError(HomeofitError):
    error_type = "dataset-parse"

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line
