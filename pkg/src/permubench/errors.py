"""Exception hierarchy shared across the benchmark toolkit."""


class PermubenchError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(PermubenchError):
    """Tensor shapes are incompatible for the requested operation."""


class UsageError(PermubenchError):
    """An API was called outside its contract (e.g. backward off-tape)."""


class SpecError(PermubenchError):
    """A model or corruption spec is invalid (budget, enum, severity)."""


class FormatError(PermubenchError):
    """A dataset archive violates the expected on-disk layout."""


class DataError(PermubenchError):
    """Dataset content cannot support the requested operation."""


class MetricError(PermubenchError):
    """A metric is undefined for the given inputs."""


class TrainingError(PermubenchError):
    """Training diverged; carries the epoch/batch where it happened."""

    def __init__(self, message: str, epoch: int, batch: int):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class NumericError(PermubenchError):
    """A non-finite value appeared where a finite one is required."""


class CompletenessError(PermubenchError):
    """An aggregation was requested over an incomplete record grid."""


class RetentionUndefinedError(PermubenchError):
    """Retention ratio is undefined (zero clean performance)."""
