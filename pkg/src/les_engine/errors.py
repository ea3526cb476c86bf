"""Exception hierarchy.

Every error raised by the engine derives from :class:`LesError`. The four
intermediate classes map one-to-one onto CLI exit codes.
"""


class LesError(Exception):
    exit_code = 1


class IngestError(LesError):
    exit_code = 2


class StatsError(LesError):
    exit_code = 3


class TargetError(LesError):
    exit_code = 4


class ParamsError(LesError):
    exit_code = 5


# -- ingestion ---------------------------------------------------------------

class MissingColumn(IngestError):
    def __init__(self, column):
        super().__init__(f"missing AU column {column!r}")
        self.column = column


class MalformedRow(IngestError):
    def __init__(self, row, reason):
        super().__init__(f"row {row}: {reason}")
        self.row = row
        self.reason = reason


class EmptyInput(IngestError):
    pass


class CatalogFileNotFound(IngestError, FileNotFoundError):
    def __init__(self, path):
        IngestError.__init__(self, f"file not found: {path}")
        self.path = path


class BadLabel(IngestError):
    pass


# -- statistics / feature table ---------------------------------------------

class StatsIncomplete(StatsError):
    pass


class UnknownEmotion(StatsError):
    pass


class EmptyCatalog(StatsError):
    pass


class EmotionUnderrepresented(StatsError):
    pass


class MissingAnchor(StatsError):
    def __init__(self, emotion, level):
        super().__init__(f"missing anchor ({emotion!r}, {level})")
        self.emotion = emotion
        self.level = level


class BadParams(StatsError):
    pass


class TooFewPoints(StatsError):
    pass


class SingleCluster(StatsError):
    pass


class DegenerateCluster(StatsError):
    pass


# -- injection targets -------------------------------------------------------

class BadTarget(TargetError):
    pass


class BadIndex(TargetError):
    pass


# -- network parameters ------------------------------------------------------

class SchemaMismatch(ParamsError):
    pass


class ShapeMismatch(ParamsError):
    pass


class BadLength(ParamsError):
    pass


class NonFiniteActivation(ParamsError):
    pass


class Diverged(ParamsError):
    pass
