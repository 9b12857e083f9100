"""Exception types shared across the package."""


class MMFuseError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(MMFuseError):
    """Operand shapes are incompatible with the requested operation."""


class InputError(MMFuseError):
    """Caller-supplied data or configuration is invalid."""


class UsageError(MMFuseError):
    """An API was invoked in a way its contract forbids."""


class FileFormatError(MMFuseError):
    """A serialized artifact violates its binary format."""


class BadMagicError(FileFormatError):
    """The file does not start with the expected magic bytes."""


class VersionMismatchError(FileFormatError):
    """The file declares a format version this code does not read."""


class TruncatedFileError(FileFormatError):
    """The file ends before its declared payload does."""


class InconsistentDimsError(FileFormatError):
    """Declared dimensions are invalid or contradict each other."""


class VariantMismatchError(MMFuseError):
    """A checkpoint holds a different model variant than requested."""


class NumericsError(MMFuseError):
    """A computation left the finite range (diverging loss, overflow)."""
