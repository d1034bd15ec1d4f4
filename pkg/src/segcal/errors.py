"""Exception hierarchy shared by all segcal modules."""


class SegcalError(Exception):
    """Base class for every error raised deliberately by segcal."""


class FormatError(SegcalError, ValueError):
    """A file does not follow the expected on-disk layout."""


class BadMagicError(FormatError):
    pass


class UnsupportedFormatError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class MalformedHeaderError(FormatError):
    pass


class PayloadSizeError(FormatError):
    """Payload length disagrees with the header dimensions."""


class TruncatedError(PayloadSizeError):
    pass


class TrailingDataError(PayloadSizeError):
    pass


class DimensionError(FormatError):
    """Zero-sized or overflowing raster dimensions."""


class InvariantError(SegcalError, ValueError):
    """A value violates its type invariants."""


class NonFiniteError(InvariantError):
    pass


class NormalizationError(InvariantError):
    pass


class ValueRangeError(InvariantError):
    """Probability outside [0, 1] or class id outside [0, C) and not ignore."""


class ShapeMismatchError(SegcalError, ValueError):
    pass


class EmptyInputError(SegcalError, ValueError):
    """Nothing to compute on: no valid pixels, no members, empty accumulator."""


class ManifestError(SegcalError, ValueError):
    pass


class DuplicateIdError(ManifestError):
    pass


class MissingFileError(ManifestError):
    pass


class InconsistentManifestError(ManifestError):
    """Entries disagree on class count or raster size."""
