"""Exception hierarchy shared across the toolkit.

Data errors (bad files, bad values) derive from :class:`DataError` so the CLI
can map them to exit code 2.
"""

from __future__ import annotations


class CadenceError(Exception):
    """Base class for every error raised by this package."""


class DataError(CadenceError):
    """Input data is malformed, missing or inconsistent."""


class EmptyRecording(DataError):
    pass


class NonFiniteSample(DataError):
    pass


class UnknownLayout(DataError):
    pass


class RecordParse(DataError):
    def __init__(self, file, line: int, reason: str = ""):
        self.file = str(file)
        self.line = line
        self.reason = reason
        msg = f"{self.file}:{line}: malformed record"
        if reason:
            msg += f" ({reason})"
        super().__init__(msg)


class MissingColumns(DataError):
    pass


class SchemaMismatch(DataError):
    pass


class ParameterOutOfRange(CadenceError, ValueError):
    pass


class EmptyDataset(DataError):
    pass


class WrongPairCount(CadenceError, ValueError):
    pass


class ShapeMismatch(CadenceError, ValueError):
    pass


class NonFiniteActivation(CadenceError, FloatingPointError):
    pass


class NonFiniteGradient(CadenceError, FloatingPointError):
    pass


class InvalidEpsilon(CadenceError, ValueError):
    pass


class DivergedLoss(CadenceError, FloatingPointError):
    pass


class VersionMismatch(DataError):
    pass


class ChecksumMismatch(DataError):
    pass


class MissingClass(CadenceError, ValueError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"class {name!r} has no examples in the training split")


class SingleClass(CadenceError, ValueError):
    pass


class NonFiniteFeature(DataError):
    pass


class ZeroVector(CadenceError, ValueError):
    def __init__(self, index: int):
        self.index = index
        super().__init__(f"embedding at index {index} has zero norm")


class OutOfBounds(CadenceError, IndexError):
    pass


class EmptyPredictions(CadenceError):
    pass


class EmptyTruth(CadenceError):
    pass
