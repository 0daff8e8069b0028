"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: validation problems exit 1, data
problems exit 2, numerical failures exit 3.
"""


class ContractViolation(ValueError):
    """An argument violates a documented precondition (bad dimension, label
    out of range, invalid threshold)."""


class DataError(Exception):
    """Input data is structurally unusable: missing classes, empty score
    lists, malformed files."""


class FitError(DataError):
    """A model fit cannot start, e.g. fewer samples than components."""


class NumericalError(Exception):
    """A numerical procedure failed beyond repair, e.g. a covariance that
    stays singular after regularisation."""
