"""Exception hierarchy.

Three families map onto CLI exit codes: configuration/usage problems (1),
data and file-format problems (2), numerical failures (3).
"""


class VeteError(Exception):
    pass


# --- configuration / usage -------------------------------------------------

class ConfigError(VeteError, ValueError):
    pass


class UnsupportedConfiguration(ConfigError):
    pass


class ShapeError(ConfigError):
    pass


class BatchTooSmall(ConfigError):
    pass


class EmptyReport(ConfigError):
    pass


# --- data / format ---------------------------------------------------------

class DataError(VeteError):
    pass


class EmptyCaption(DataError):
    pass


class EmptyInput(DataError):
    pass


class TooFewRecords(DataError):
    pass


class TooFewPairs(DataError):
    pass


class FormatError(DataError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


# --- numerical -------------------------------------------------------------

class NumericalError(VeteError, ArithmeticError):
    pass


class DegenerateVector(NumericalError):
    pass


class DegenerateEmbedding(DegenerateVector):
    pass


class DegenerateSimilarities(NumericalError):
    pass


class DegenerateInput(NumericalError):
    pass


class NonFiniteGradient(NumericalError):
    pass


class EvaluationImpossible(NumericalError):
    pass


class SearchFailed(NumericalError):
    pass
