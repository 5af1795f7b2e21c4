"""Exception hierarchy shared across the package."""


class FactoredRLError(Exception):
    """Base class for all package errors."""


class DimensionError(FactoredRLError, ValueError):
    """Array shapes do not agree with the network or action specification."""


class TrainingDivergence(FactoredRLError, ArithmeticError):
    """A loss or gradient became non-finite.

    ``batch_index`` is the first offending row of the batch when known.
    """

    def __init__(self, message: str, batch_index: int | None = None, update: int | None = None):
        super().__init__(message)
        self.batch_index = batch_index
        self.update = update


class UnsupportedModeError(FactoredRLError, ValueError):
    """Operation is undefined for the requested decomposition mode."""


class ConfigError(FactoredRLError, ValueError):
    pass


class FileFormatError(FactoredRLError, OSError):
    """A binary file (dataset or checkpoint) could not be decoded."""


class MagicMismatch(FileFormatError):
    pass


class VersionMismatch(FileFormatError):
    pass


class TruncatedFile(FileFormatError):
    pass


class DatasetError(FactoredRLError):
    pass


class InvalidDataset(DatasetError, ValueError):
    pass


class InsufficientSource(DatasetError, ValueError):
    pass
