"""Exception types; the CLI maps these to exit codes 1 and 2."""


class ValidationError(ValueError):
    """Bad input: domain violations, malformed files, inconsistent configs."""


class NumericError(ArithmeticError):
    """A numerical routine failed (quadrature, non-finite posterior, ...)."""
