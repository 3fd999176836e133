"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, data/format
problems exit 2, numerical failures exit 3.
"""


class GeodiscoError(Exception):
    """Base class for all package-specific errors."""


class DomainError(GeodiscoError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class ShapeError(GeodiscoError, ValueError):
    """Array dimensions of the operands do not agree."""


class ConfigError(GeodiscoError, ValueError):
    """A configuration value violates a precondition."""


class DataError(GeodiscoError, ValueError):
    """Dataset contents violate a contract (labels, rosters, sizes)."""


class FormatError(GeodiscoError, ValueError):
    """A file does not conform to its binary or CSV format."""


class DegenerateConfigurationError(GeodiscoError, ValueError):
    """A point configuration is singular for the requested kernel."""


class NumericalError(GeodiscoError, ArithmeticError):
    """A computation produced non-finite values or failed to converge."""
