"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: bad usage -> 1, bad data -> 2,
numerical failure -> 3.
"""


class DetfuseError(Exception):
    """Base class for all toolkit errors."""


class DataError(DetfuseError):
    """Input files or data-dependent state made the operation impossible."""


class NumericalError(DetfuseError):
    """A numerical routine failed to produce a usable result."""


class TotalConflictError(NumericalError):
    """Evidence combination collapsed: the normalization mass is ~0."""
