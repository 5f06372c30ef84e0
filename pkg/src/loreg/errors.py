"""Exception and warning types raised across the package."""

import numpy as np


class LoregError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(LoregError, ValueError):
    pass


class NotSymmetric(LoregError, ValueError):
    pass


class NotPositiveDefinite(LoregError, np.linalg.LinAlgError):
    pass


class SingularActiveGram(NotPositiveDefinite):
    """The Gram matrix of the active columns is numerically singular."""


class NotNormalized(LoregError, ValueError):
    """Design columns do not have Euclidean norm sqrt(n)."""


class DegenerateColumn(LoregError, ValueError):
    def __init__(self, index, value):
        super().__init__(f"column {index} has second moment {value:.3g} <= floor")
        self.index = index


class NonPositiveVariance(LoregError, ArithmeticError):
    pass


class AllCandidatesFailed(LoregError, RuntimeError):
    pass


class IndexNotInActiveSet(LoregError, KeyError):
    pass


class InvalidPValue(LoregError, ValueError):
    pass


class IndivisibleGroups(LoregError, ValueError):
    pass


class InsufficientReplications(LoregError, ValueError):
    pass


class SpecError(LoregError, ValueError):
    """Invalid simulation spec; ``field`` names the offending key path."""

    def __init__(self, message, field=None, line=None):
        super().__init__(message)
        self.message = message
        self.field = field
        self.line = line

    def __str__(self):
        where = []
        if self.field is not None:
            where.append(f"field '{self.field}'")
        if self.line is not None:
            where.append(f"line {self.line}")
        return (f"{', '.join(where)}: " if where else "") + self.message


class CSVParseError(LoregError, ValueError):
    def __init__(self, message, row=None, col=None):
        loc = ""
        if row is not None:
            loc = f"row {row}" + (f", column {col}" if col is not None else "") + ": "
        super().__init__(loc + message)
        self.row = row
        self.col = col


class MaxSweepsExceeded(UserWarning):
    """Coordinate descent hit its sweep cap; the last iterate is returned."""


class DegenerateVariance(UserWarning):
    """A variance estimate was floored."""
