"""Exception hierarchy shared by all modules."""


class MfshareError(Exception):
    """Base class for every error raised by the package."""


class ParameterError(MfshareError, ValueError):
    pass


class DomainError(MfshareError, ValueError):
    pass


class ShapeError(MfshareError, ValueError):
    pass


class UnsupportedLawError(MfshareError, TypeError):
    pass


class DataError(MfshareError, ValueError):
    pass


class DegenerateDataError(DataError):
    pass


class SymmetryError(MfshareError, ValueError):
    pass


class PlanError(MfshareError, ValueError):
    pass


class TrainingError(MfshareError, RuntimeError):
    def __init__(self, message: str, epoch: int | None = None, history=None):
        super().__init__(message)
        self.epoch = epoch
        self.history = history


class SearchError(MfshareError, RuntimeError):
    pass


class BlowUpError(MfshareError, FloatingPointError):
    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class StageError(MfshareError, RuntimeError):
    """Pipeline failure tagged with the stage that raised it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
