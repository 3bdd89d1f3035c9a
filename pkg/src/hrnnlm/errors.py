"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericError -> 3.
"""


class HrnnlmError(Exception):
    """Base class for all package errors."""


class ConfigError(HrnnlmError):
    """Bad arguments, inconsistent specs, unknown config keys, missing paths."""


class DimensionError(ConfigError):
    """Array shapes inconsistent with the declared layer dimensions."""


class DataError(HrnnlmError):
    """Malformed input data or on-disk artifacts."""


class EmptyCorpusError(DataError):
    """Corpus contains no usable text."""


class OovError(DataError):
    """Character outside the vocabulary (char mode only)."""


class CheckpointError(DataError):
    """Checkpoint file is corrupt or has an unsupported layout."""


class PosteriorFormatError(DataError):
    """Frame-posterior file violates its declared format."""


class NumericError(HrnnlmError):
    """Non-finite values where finite ones are required."""


class DivergenceError(NumericError):
    """Training loss became non-finite."""
