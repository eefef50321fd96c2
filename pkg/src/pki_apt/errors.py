"""Exception hierarchy.

Everything raised on bad input derives from :class:`DataError` or
:class:`ConfigError`; the CLI maps those to exit codes 3 and 2.
"""


class PkiError(Exception):
    """Base class for all package errors."""


class ConfigError(PkiError, ValueError):
    """Invalid experiment configuration or hyperparameters."""


class DataError(PkiError, ValueError):
    """Input data does not satisfy an operation's preconditions."""


# flow ingestion
class EmptyInput(DataError):
    pass


class EncodingError(DataError):
    pass


class MalformedRow(DataError):
    def __init__(self, line: int, expected: int, got: int):
        super().__init__(f"line {line}: expected {expected} cells, got {got}")
        self.line = line
        self.expected = expected
        self.got = got

    def __reduce__(self):
        return type(self), (self.line, self.expected, self.got)


class DuplicateColumn(DataError):
    pass


class MissingLabelColumn(DataError):
    pass


class AllColumnsDropped(DataError):
    pass


class UnparseableCell(DataError):
    def __init__(self, text: str, row: int, column: str):
        super().__init__(f"cannot parse {text!r} as a number (row {row}, column {column!r})")
        self.text = text
        self.row = row
        self.column = column

    def __reduce__(self):
        return type(self), (self.text, self.row, self.column)


class RowCountMismatch(DataError):
    pass


# datasets
class EmptyLabelList(DataError):
    pass


class UnknownLabel(DataError):
    pass


class DegenerateSplit(DataError):
    pass


class EmptyDataset(DataError):
    pass


class DimensionMismatch(DataError):
    pass


# feature selection
class NegativeFeature(DataError):
    def __init__(self, feature: int):
        super().__init__(f"feature {feature} has negative values; chi2 needs nonnegative input")
        self.feature = feature

    def __reduce__(self):
        return type(self), (self.feature,)


class SingleClass(DataError):
    pass


class KOutOfRange(DataError):
    pass


# clustering
class TooFewPoints(DataError):
    pass


class SingularCovariance(DataError):
    pass


# metrics
class LengthMismatch(DataError):
    pass


class LabelOutOfRange(DataError):
    pass


class InvalidSpec(ConfigError):
    pass


class SweepError(PkiError):
    """A candidate inside a sweep failed; ``candidate`` names it."""

    def __init__(self, stage: str, candidate, cause: Exception):
        super().__init__(f"{stage} failed at candidate {candidate}: {cause}")
        self.stage = stage
        self.candidate = candidate
        self.cause = cause
        self.__cause__ = cause

    def __reduce__(self):
        return type(self), (self.stage, self.candidate, self.cause)
