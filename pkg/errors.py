"""Exception hierarchy for dynser.

Every error carries the CLI exit code it maps to, so ``app.py`` can turn
any failure into a stable process status.
"""


class DynserError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(DynserError):
    """Bad configuration file, flag or override."""


class ParameterError(DynserError, ValueError):
    """An argument is outside its valid range."""


class DimensionError(DynserError, ValueError):
    """Tensor shapes do not agree."""


class ProtocolError(DynserError, RuntimeError):
    """An operation was called in a state where it is undefined."""


class CheckpointMismatchError(DynserError):
    """A checkpoint does not match the requested variant or config."""


class DataError(DynserError):
    """Input data could not be used."""

    exit_code = 2


class UnsupportedFormatError(DataError):
    """Audio encoding other than 16-bit PCM."""


class ManifestError(DataError):
    """Manifest rows are malformed, duplicated or missing."""


class LabelError(DataError, ValueError):
    """A label id or name is outside the five-emotion set."""


class StratificationError(DataError):
    """A class has fewer samples than there are folds."""


class CacheMissingError(DataError):
    """Features for a manifest entry have not been extracted."""


class InputContractError(DataError):
    """A model received a batch without one of its required streams."""


class NumericError(DynserError, ArithmeticError):
    """A NaN or Inf appeared in a forward pass or loss."""

    exit_code = 3
