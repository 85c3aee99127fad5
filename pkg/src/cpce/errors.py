"""Exception hierarchy shared by every module of the package."""


class CpceError(Exception):
    """Base class for all package errors."""


class SchemaError(CpceError):
    """A column is missing or holds values outside its declared domain."""


class DataError(CpceError):
    """Non-finite or missing values in the input data."""


class EmptyCellError(CpceError):
    """An observed (Z, S) cell, subset, or normalization group has no rows."""


class ConfigError(CpceError):
    """Invalid configuration value or incompatible option combination."""


class UnsupportedError(CpceError):
    """The requested operation is not defined for this object kind."""


class MonotonicityError(CpceError):
    """Principal-score components violate p1(x) >= p0(x)."""


class OverlapError(CpceError):
    """A probability or denominator leaves the admissible overlap region."""


class DegenerateLabelsError(CpceError):
    """Binary labels take a single value, so a logistic fit is undefined."""


class ConvergenceError(CpceError):
    """An iterative solver failed to converge."""
