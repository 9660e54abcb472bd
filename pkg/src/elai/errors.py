"""Exception hierarchy.

Every error raised by the package derives from :class:`ElaiError`.  The three
families map onto CLI exit codes: configuration (2), data / I/O (3) and
numeric failure (4).
"""


class ElaiError(Exception):
    exit_code = 1


class ConfigError(ElaiError, ValueError):
    exit_code = 2


class DataError(ElaiError, ValueError):
    exit_code = 3


class NumericError(ElaiError, ArithmeticError):
    exit_code = 4


# --- configuration -----------------------------------------------------------

class BadFractions(ConfigError):
    pass


class BadK(ConfigError):
    pass


class BadConfig(ConfigError):
    pass


class TooManyFeatures(ConfigError):
    def __init__(self, k, cap):
        super().__init__(
            f"exact Shapley needs k <= {cap}, got k={k}; use --method sampled"
        )
        self.k = k
        self.cap = cap


# --- data / shapes -----------------------------------------------------------

class MissingColumn(DataError):
    def __init__(self, column):
        super().__init__(f"MissingColumn: {column!r} not in header")
        self.column = column


class NonNumericCell(DataError):
    def __init__(self, row, col, value=None):
        super().__init__(f"NonNumericCell: row {row}, column {col!r}: {value!r}")
        self.row = row
        self.col = col


class UnknownLabel(DataError):
    def __init__(self, row, value=None):
        super().__init__(f"UnknownLabel: row {row}: {value!r}")
        self.row = row


class EmptyFile(DataError):
    pass


class TooFewRows(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class LengthMismatch(DataError):
    pass


class ClassAbsent(DataError):
    pass


class NoCategories(DataError):
    pass


class UnknownCategory(DataError):
    def __init__(self, category):
        super().__init__(f"UnknownCategory: {category!r}")
        self.category = category


class SchemaMismatch(DataError):
    pass


class BadIndex(DataError):
    pass


class TraceMismatch(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class IoFailure(DataError):
    pass


class VersionMismatch(DataError):
    pass


class CorruptCheckpoint(DataError):
    pass


# --- numeric -----------------------------------------------------------------

class NonConvergence(NumericError):
    pass


class SingularScatter(NumericError):
    pass


class NonFiniteLoss(NumericError):
    pass


class UndefinedMetric(NumericError, ValueError):
    def __init__(self, name):
        super().__init__(f"UndefinedMetric: {name} has a 0/0 denominator")
        self.name = name


class SingleClass(NumericError, ValueError):
    pass
