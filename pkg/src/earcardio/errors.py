"""Exception hierarchy shared by all pipeline stages."""


class EarCardioError(Exception):
    """Base class for every error raised by this package."""


class DataError(EarCardioError):
    """Input data violates a structural precondition."""


class UninterpolatableSeriesError(DataError):
    pass


class MustInterpolateFirstError(DataError):
    pass


class AlignmentError(DataError):
    pass


class TraceParseError(DataError):
    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class MustBeCleanError(DataError):
    pass


class CorruptTraceError(DataError):
    pass


class DecompositionLengthError(DataError):
    pass


class InsufficientBeatsError(DataError):
    pass


class UndefinedMetricError(DataError):
    """A metric is mathematically undefined for the given inputs (zero power, zero norm...)."""


class ProfileValidationError(EarCardioError):
    pass


class InvalidBandError(EarCardioError):
    pass


class NumericGuardError(EarCardioError):
    pass


class HeadShapeError(EarCardioError):
    pass


class TrainingFailureError(EarCardioError):
    def __init__(self, message: str, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


class ConfigError(EarCardioError):
    def __init__(self, message: str, field: str | None = None):
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message)


class InsufficientCorpusError(DataError, ValueError):
    """Too few training windows for the requested model or split."""
