"""Exception types shared across the package.

The CLI maps these onto exit codes: ``DataError`` -> 3, ``NumericalError`` -> 4.
"""


class DataError(ValueError):
    """Malformed input, contract violation on shapes/labels, or an empty result."""


class NumericalError(ArithmeticError):
    """A numerical routine failed (singular system, non-finite values, ...)."""


class RankDeficientError(NumericalError):
    """Design matrix is rank deficient.

    Attributes
    ----------
    columns : list[int]
        Indices of the columns found to be linearly dependent on the others.
    """

    def __init__(self, columns, message=None):
        self.columns = list(columns)
        if message is None:
            message = f"rank-deficient design; dependent columns: {self.columns}"
        super().__init__(message)
