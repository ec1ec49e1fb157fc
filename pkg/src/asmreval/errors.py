"""Exception hierarchy shared across the toolkit.

Every error raised by this package derives from :class:`AsmrEvalError` so
callers can catch toolkit failures without swallowing unrelated exceptions.
File-not-found conditions use the builtin ``FileNotFoundError``.
"""


class AsmrEvalError(Exception):
    """Base class for all toolkit errors."""


class UnsupportedFormat(AsmrEvalError):
    """Audio file is not a decodable RIFF/WAVE PCM or IEEE-float stream."""


class SignalTooShort(AsmrEvalError):
    """Signal is shorter than one analysis frame."""


class EmptyFrame(AsmrEvalError):
    """Frame contains no samples."""


class LagTooLarge(AsmrEvalError):
    """Requested lag exceeds what the frame length supports."""


class InvalidRange(AsmrEvalError):
    """Pitch search range is incompatible with the analysis setup."""


class EmptyTrack(AsmrEvalError):
    """Pitch decoding was asked to run on zero frames."""


class LengthMismatch(AsmrEvalError):
    """Parallel per-frame sequences differ in length."""


class NoActiveFrames(AsmrEvalError):
    """Every frame was classified as silence; the unvoiced ratio is undefined."""


class EmptyReference(AsmrEvalError):
    """Reference transcript has no comparison units."""


class EmptyInput(AsmrEvalError):
    """An aggregate was requested over an empty collection."""


class DimMismatch(AsmrEvalError):
    """Embedding vectors have different dimensionality."""


class ZeroVector(AsmrEvalError):
    """Cosine similarity is undefined for an all-zero embedding."""


class EmptyPool(AsmrEvalError):
    """Retrieval was attempted against a pool with no entries."""


class MissingPool(AsmrEvalError):
    """Cross-style selection needs a pool that was not provided."""


class ParseError(AsmrEvalError):
    """A manifest, fixture, or backend response could not be parsed."""


class TransportError(AsmrEvalError):
    """A remote backend call failed after exhausting retries."""


class ManifestError(AsmrEvalError):
    """Evaluation manifest is structurally invalid."""


class BackendFailure(AsmrEvalError):
    """An external backend command or endpoint failed."""
