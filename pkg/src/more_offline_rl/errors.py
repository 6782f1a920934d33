from typing import Optional


class MoreError(Exception):
    """Base class for every error raised by more_offline_rl."""


class DimensionMismatchError(MoreError, ValueError):
    pass


class NonFiniteError(MoreError, ValueError):
    def __init__(self, message: str, index: Optional[int] = None):
        if index is not None:
            message = f"{message} (first offending coordinate: {index})"
        super().__init__(message)
        self.index = index


class DivergenceError(MoreError):
    def __init__(self, phase: str, step: int, detail: str = ""):
        message = f"{phase} diverged at step {step}"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)
        self.phase = phase
        self.step = step


class PreconditionError(MoreError, ValueError):
    pass


class ConfigError(MoreError, ValueError):
    pass


class CheckpointError(MoreError):
    pass


class DatasetFormatError(MoreError):
    pass


class MagicMismatchError(DatasetFormatError):
    pass


class CountMismatchError(DatasetFormatError):
    pass


class DimensionInconsistencyError(DatasetFormatError):
    def __init__(self, message: str, line_number: Optional[int] = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class MalformedRecordError(DatasetFormatError):
    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number
