"""Exception types raised across the pipeline."""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class DataFormatError(PipelineError):
    """Input file is missing, garbled, empty, or not in the neutral CSV format."""


class ValidationError(PipelineError):
    """Parsed data violates a record invariant (bad label, wrong rate, ...)."""


class FilterDesignError(PipelineError):
    """Requested filter parameters are infeasible (cutoffs vs. Nyquist etc.)."""


class SignalLengthError(PipelineError):
    """Signal too short for the requested operation."""


class QualityTooLow(PipelineError):
    """Too few heartbeats detected in a segment; segment should be dropped."""


class InsufficientBeats(PipelineError):
    """Not enough inter-beat intervals to compute a feature."""


class ShapeError(PipelineError):
    """Array shape does not match the model's expected layer shapes."""


class UsageError(PipelineError):
    """API misuse: stale trace, mismatched gradients, bad mode, ..."""


class ConfigError(PipelineError):
    """Invalid run configuration (empty validation set, absent class, ...)."""


class SchemaError(PipelineError):
    """A metrics/cache file has an unknown or incompatible schema version."""
