"""Exception types shared across the package.

DataError covers malformed inputs and violated structural invariants
(bad shapes, invalid configs, broken cohort files).  NumericalError covers
failures of numeric health (non-finite values, diverged iterations).
The CLI maps them to distinct exit codes.
"""


class DataError(ValueError):
    """Malformed data or violated structural invariant."""


class NumericalError(ArithmeticError):
    """Non-finite values or failed numerical iteration."""
