"""Exception hierarchy shared across the package."""


class SemcomError(Exception):
    """Base class for all package errors."""


class BuildError(SemcomError):
    """Incompatible layer chain or invalid network configuration."""


class TapeError(SemcomError):
    """backward() called without a matching training-mode forward()."""


class NonFiniteError(SemcomError):
    """A NaN or Inf appeared where only finite values are allowed."""


class NumericGuardError(SemcomError):
    """An operation hit a numerically undefined point (e.g. zero-norm input)."""


class IngestionError(SemcomError):
    """Base class for dataset ingestion failures."""


class MagicNumberError(IngestionError):
    """IDX file carries an unexpected magic number."""


class TruncatedFileError(IngestionError):
    """IDX file is shorter than its header promises."""


class CountMismatchError(IngestionError):
    """Image and label files disagree on the number of examples."""


class ConfigError(SemcomError):
    """Invalid experiment configuration."""


class DatasetMissingError(ConfigError):
    """A configured dataset file does not exist."""


class IntegrityError(SemcomError):
    """A file failed its SHA-256 verification."""


class CorruptionError(SemcomError):
    """A codec could not decode its input (strict mode)."""
