"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration/usage problems exit 1,
data problems exit 2, numeric failures exit 3.
"""


class ConfigurationError(ValueError):
    """Inconsistent dimensions, invalid options, or misuse of an API."""


class DataError(ValueError):
    """Malformed corpus files, label mismatches, or unreadable inputs."""


class NumericError(ArithmeticError):
    """Violated numeric invariant, e.g. non-finite loss or non-positive sigma."""
