"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: configuration problems exit 1, data
problems exit 2, numeric failures exit 3.
"""


class ShapeError(ValueError):
    """Inputs violate a primitive's or a layer's shape rule."""


class NumericError(ArithmeticError):
    """A numeric degeneracy (non-finite loss, zero-norm normalization)."""


class ConfigError(ValueError):
    """An invalid or inconsistent configuration value."""


class DataFormatError(ValueError):
    """A data file is malformed; the message names file and position."""
