"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes, so library code raises the most specific
class that applies instead of a bare ``ValueError``.
"""


class LabelDeconvError(Exception):
    """Base class for all package errors."""


class ConfigError(LabelDeconvError, ValueError):
    """Invalid hyperparameter or flag combination."""


class DataError(LabelDeconvError, ValueError):
    """Malformed graph, label or bundle data."""


class ShapeError(DataError):
    """Array dimensions do not chain."""


class NumericError(LabelDeconvError, ArithmeticError):
    """Non-finite loss or parameters during training."""


class SingularMatrixError(LabelDeconvError, ArithmeticError):
    """A matrix that must be inverted is (numerically) singular."""


class PreconditionError(LabelDeconvError, ValueError):
    """A theorem's hypotheses do not hold for the given input."""
