"""Exception hierarchy for redundancy-lens."""

from typing import Any, List, Optional


class LensError(ValueError):
    """Base class for every error raised by the library."""


class ShapeError(LensError):
    """Operands or tensors have incompatible shapes."""


class DegenerateRowError(LensError):
    """A softmax row has no allowed entry."""


class CheckpointError(LensError):
    """A checkpoint manifest or blob cannot be read."""


class TruncationError(CheckpointError):
    """The checkpoint blob ends before a declared tensor does."""

    def __init__(self, tensor: str, expected: int, available: int):
        self.tensor = tensor
        super().__init__(
            f"blob truncated at tensor '{tensor}': "
            f"needs {expected} bytes, {available} available"
        )


class ParameterError(LensError):
    """A numeric parameter is outside its valid range."""


class SelectionError(LensError):
    """A hidden-unit selection does not fit the FFN it is applied to."""


class PlanError(LensError):
    """A reduction plan is malformed or does not fit the model."""


class OracleError(LensError):
    """An oracle evaluation failed during a ranking search.

    The evaluations completed before the failure are kept on ``partial_log``.
    """

    def __init__(self, message: str, partial_log: Optional[List[Any]] = None):
        super().__init__(message)
        self.partial_log = list(partial_log or [])
