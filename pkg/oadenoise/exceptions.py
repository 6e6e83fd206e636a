"""Errors and warnings raised by ``oadenoise``."""

from astropy.utils.exceptions import AstropyUserWarning

__all__ = ['OptoacousticWarning', 'DataFormatError', 'BadMagicError',
           'TruncatedFileError', 'NonFiniteDataError', 'ShapeMismatchError',
           'ConfigError', 'NumericalError', 'MissingArtifactError']


class OptoacousticWarning(AstropyUserWarning):
    """Recoverable data condition (skipped input, clamped values, ...)."""


class DataFormatError(ValueError):
    """A file does not conform to its declared format."""


class BadMagicError(DataFormatError):
    """File does not start with the expected magic bytes."""


class TruncatedFileError(DataFormatError):
    """Payload is shorter (or longer) than the header announces."""


class NonFiniteDataError(DataFormatError):
    """Samples contain NaN or Inf."""


class ShapeMismatchError(ValueError):
    """Array dimensions are incompatible with the operation."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class NumericalError(ArithmeticError):
    """Iterative computation produced a non-finite or diverging value.

    Parameters
    ----------
    message : str
        Description of the failure.

    trace : list
        Objective or loss values recorded up to the failure.

    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class MissingArtifactError(FileNotFoundError):
    """An upstream pipeline artifact was not found where expected."""
