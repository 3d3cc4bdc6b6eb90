"""Exception types shared across the package.

The CLI maps these onto exit codes: bad input or a broken contract exits
with 1, resource exhaustion exits with 2.
"""


class CrownCutError(Exception):
    """Base class for all errors raised by this package."""


class InputError(CrownCutError):
    """Malformed, empty or otherwise unusable input data."""


class ParameterError(CrownCutError):
    """A parameter value is outside its valid range or inconsistent."""


class ResourceError(CrownCutError):
    """A computation would exceed the configured memory budget."""
