"""Exception taxonomy shared across the package.

The CLI maps these onto its exit codes: bad flag values surface as plain
``ValueError`` (usage, exit 1), malformed or inconsistent inputs raise
``DataFormatError`` (exit 2), and numerical breakdowns raise
``NumericalError`` (exit 3).
"""


class KsatError(Exception):
    """Base class for package-specific failures."""


class DataFormatError(KsatError):
    """Malformed or mutually inconsistent input data (files, ids, dimensions)."""


class NumericalError(KsatError):
    """Numerical collapse: degenerate probabilities or a failed gradient check."""
