"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Bad input: parameters, shapes, or dataset contents violate a precondition."""


class SolverError(RuntimeError):
    """The nodal system could not be solved (singular or ill-conditioned)."""

    def __init__(self, message: str, condition: float | None = None):
        super().__init__(message)
        self.condition = condition


class ArchiveError(ValueError):
    """A weight archive is corrupt, truncated, or incompatible with the network."""


class TrainingError(RuntimeError):
    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
