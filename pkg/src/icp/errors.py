"""Exception hierarchy.

Every structured failure in the package raises an ``IcpError`` subclass, so
callers (and the fuzz tests) can distinguish malformed input from genuine
bugs: arbitrary bytes fed to any decoder must surface as one of these, never
as an IndexError/struct.error escaping from the internals.
"""


class IcpError(Exception):
    """Base class for all errors raised by this package."""


# --- image record codec ---

class UnsupportedFormat(IcpError):
    """Input is not a format this codec handles (magic or maxval)."""


class BadHeader(IcpError):
    """Header is syntactically or semantically invalid."""


class TruncatedInput(IcpError):
    """Input ends before the declared amount of data."""


class FilenameTooLong(IcpError):
    """Filename does not fit the 16-bit length field."""


class BadMagic(IcpError):
    """Leading magic bytes do not identify this format."""


class BadVersion(IcpError):
    """Format version is not supported."""


# --- container ---

class DuplicateFilename(IcpError):
    """Filename already present in the store."""


class ThresholdExceeded(IcpError):
    """Append would grow the store past its rollover threshold."""


class NotFound(IcpError):
    """No entry with the requested filename."""


class CorruptRecord(IcpError):
    """A stored record failed to decode."""

    def __init__(self, msg, offset=None, filename=None):
        super().__init__(msg)
        self.offset = offset
        self.filename = filename


class IndexDataMismatch(IcpError):
    """Index file disagrees with the data file or violates an invariant."""


class EmptyStore(IcpError):
    """Operation requires a non-empty store."""


# --- processing engine ---

class AlphaLengthMismatch(IcpError):
    """Reduce coefficient vector does not match the group count."""


# --- feature extraction ---

class ImageTooSmall(IcpError):
    """Image is below the extractor's minimum size."""


class WrongColorMode(IcpError):
    """Extractor requires a grey image."""


class DimensionMismatch(IcpError):
    """Descriptor sets have different dimensionality."""


# --- dispatch service ---

class BadFrame(IcpError):
    """Wire frame is malformed."""


class PayloadTooLarge(IcpError):
    """Declared payload exceeds the configured limit."""


class UndecodablePayload(IcpError):
    """Frame payload is not a valid image record."""


class ConfigError(IcpError):
    """Match-rule configuration file is invalid."""


# --- benchmarks ---

class InsufficientFiles(IcpError):
    """Benchmark input directory holds fewer files than requested."""
