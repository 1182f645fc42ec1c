"""Exception hierarchy.

Every error raised on purpose by the package derives from ``EcgFieldError``
so the CLI can map whole families onto exit codes.
"""


class EcgFieldError(Exception):
    pass


# --- ingestion -------------------------------------------------------------

class IngestError(EcgFieldError):
    pass


class MalformedHeader(IngestError):
    pass


class SampleCountMismatch(IngestError):
    pass


class NonTwelveLead(IngestError):
    pass


class Overflow16Bit(IngestError):
    pass


class MissingLeadColumn(IngestError):
    pass


class NonNumericCell(IngestError):
    def __init__(self, row: int, col: int, value: str):
        super().__init__(f"non-numeric cell at row {row}, column {col}: {value!r}")
        self.row = row
        self.col = col
        self.value = value


class SeriesTooShort(IngestError):
    pass


class DuplicateRecordId(IngestError):
    pass


class MissingFile(IngestError):
    pass


# --- signal processing / encoding ------------------------------------------

class EncodeError(EcgFieldError):
    pass


class NonFiniteSample(EncodeError):
    pass


class WindowTooLarge(EncodeError):
    pass


class EvenWindow(EncodeError):
    pass


class NotchAtOrAboveNyquist(EncodeError):
    pass


class OutOfDomain(EncodeError):
    pass


class QTooSmall(EncodeError):
    pass


class OutSizeTooLarge(EncodeError):
    pass


class RpSeriesTooShort(EncodeError):
    pass


class SizeMismatch(EncodeError):
    pass


class TileCountMismatch(EncodeError):
    pass


class MalformedPng(EncodeError):
    pass


class UnknownMethod(EncodeError):
    pass


# --- retrieval / persistence ----------------------------------------------

class IndexError_(EcgFieldError):
    """Base for index and evaluation failures (trailing underscore avoids the builtin)."""


class DimMismatch(IndexError_):
    pass


class MissingTruth(IndexError_):
    pass


class BadMagic(IndexError_):
    pass


class VersionMismatch(IndexError_):
    pass


class ChecksumMismatch(IndexError_):
    pass


# --- training --------------------------------------------------------------

class TrainError(EcgFieldError):
    pass


class BadPatchGrid(TrainError):
    pass


class EmptyAfterPadding(TrainError):
    pass


class EmptyBatch(TrainError):
    pass


class NoNegativesAvailable(TrainError):
    pass


class BatchTooSmall(TrainError):
    pass


class NothingToMask(TrainError):
    pass


class NoTargets(TrainError):
    pass


class ShapeMismatch(TrainError):
    pass


class NormViolation(TrainError):
    pass
