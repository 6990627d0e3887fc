from sklearn.exceptions import NotFittedError

from alulab.tensor import DimensionError, GraphError


class ConfigError(ValueError):
    """Invalid configuration or inputs that make a run impossible."""


class NotTrainedError(ConfigError, NotFittedError):
    """A model was used before it was fitted."""


class FormatError(ValueError):
    """A persisted file is malformed; ``offset`` is the failing byte position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class DegenerateInstanceError(ValueError):
    """A closed-form learning rate is undefined for this instance."""


class DataIntegrityError(ValueError):
    """Observed values contradict an invariant that must hold by construction."""


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it and the cause is chained."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage


__all__ = [
    "ConfigError",
    "DataIntegrityError",
    "DegenerateInstanceError",
    "DimensionError",
    "FormatError",
    "GraphError",
    "NotTrainedError",
    "StageError",
]
