"""Exception types raised across the package.

The CLI maps these onto exit codes: :class:`ConfigError` -> 1,
:class:`DataError` -> 2, :class:`NumericalFailure` -> 3.
"""


class LmsGnnError(Exception):
    """Base class for every error raised by this package."""


class InvalidParameterError(LmsGnnError, ValueError):
    """A scalar or structural parameter is outside its allowed range."""


class InvalidInputError(LmsGnnError, ValueError):
    """An array or object argument violates an operation's precondition."""


class DegenerateMaskError(InvalidInputError):
    """A sampling mask selects no nodes where at least one is required."""


class NumericalFailure(LmsGnnError, ArithmeticError):
    """Non-finite values or a solver that ran out of iterations.

    ``layer`` is set when the failure happened inside a network layer and
    ``residual`` when an iterative solver stopped short of its tolerance.
    """

    def __init__(self, message, *, layer=None, residual=None):
        super().__init__(message)
        self.layer = layer
        self.residual = residual


class ConfigError(LmsGnnError, ValueError):
    """Experiment configuration is malformed or inconsistent."""


class DataError(LmsGnnError):
    """Input data files could not be read into a dataset."""


class MissingFileError(DataError, FileNotFoundError):
    pass


class DimensionMismatchError(DataError, ValueError):
    pass


class NonNumericCellError(DataError, ValueError):
    def __init__(self, message, *, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column
