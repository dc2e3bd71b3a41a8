"""Exception hierarchy shared across the package."""


class VeeQSDError(Exception):
    """Base class for all package errors."""


class ConfigError(VeeQSDError):
    """Invalid, contradictory, or unparsable scenario configuration."""


class ConfigParseError(ConfigError):
    """Syntax error in a scenario file, with location info."""

    def __init__(self, message, line=None, column=None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + loc)
        self.line = line
        self.column = column


class NumericalError(VeeQSDError):
    """Numerical failure: tolerance breach, non-finite values, factorization failure."""


class PoleError(NumericalError):
    """A coefficient-field pole lies inside the requested integration window."""

    def __init__(self, message, pole_time=None):
        super().__init__(message)
        self.pole_time = pole_time


class QuadratureInstabilityError(NumericalError):
    """Step-halving disagreement of the two-time solver exceeded tolerance."""
