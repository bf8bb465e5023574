"""Exception hierarchy shared by the library and the command line."""


class RobustGPError(Exception):
    """Base class for all errors raised by robustgp."""

    exit_code = 1


class ConfigError(RobustGPError, ValueError):
    """Invalid input, configuration or model file."""

    exit_code = 2


class NumericalError(RobustGPError, ArithmeticError):
    """A numerical routine failed (singular pivot, non-convergence, instability)."""

    exit_code = 3
