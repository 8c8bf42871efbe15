"""Exception hierarchy shared by every stage of the pipeline."""


class NFDetectError(Exception):
    """Base class for all package errors."""


# -- configuration -----------------------------------------------------------

class ConfigError(NFDetectError, ValueError):
    pass


class InvalidConfig(ConfigError):
    pass


class BadRatios(ConfigError):
    pass


class BadRate(ConfigError):
    pass


# -- data ----------------------------------------------------------------------

class DataError(NFDetectError, ValueError):
    pass


class MissingColumn(DataError):
    def __init__(self, column: str):
        super().__init__(f"header lacks required column {column!r}")
        self.column = column


class MalformedRow(DataError):
    def __init__(self, line: int, column: str, value: str):
        super().__init__(f"line {line}: non-numeric value {value!r} in column {column!r}")
        self.line = line
        self.column = column
        self.value = value


class InvalidLabel(DataError):
    def __init__(self, line: int, value: str):
        super().__init__(f"line {line}: label {value!r} is not 0 or 1")
        self.line = line
        self.value = value


class EmptyFile(DataError):
    pass


class EmptyDataset(DataError):
    pass


class EmptyInput(DataError):
    pass


class EmptySplit(DataError):
    pass


class TooFewRecords(DataError):
    pass


class NotFitted(DataError):
    pass


class ArityMismatch(DataError):
    def __init__(self, expected: int, found: int):
        super().__init__(f"feature arity mismatch: expected {expected}, found {found}")
        self.expected = expected
        self.found = found


class LengthMismatch(DataError):
    pass


class EmptyBatch(DataError):
    pass


# -- numerics ------------------------------------------------------------------

class ShapeMismatch(NFDetectError, ValueError):
    pass


class InputTooShort(ShapeMismatch):
    pass


class EmptySequence(ShapeMismatch):
    pass


class TrainingError(NFDetectError, RuntimeError):
    """Raised when training produces a non-finite loss."""


# -- checkpoints ---------------------------------------------------------------

class CheckpointError(NFDetectError):
    pass


class CheckpointIOError(CheckpointError, OSError):
    pass


class VersionMismatch(CheckpointError):
    pass


class CorruptCheckpoint(CheckpointError):
    pass
