"""Exception hierarchy shared by all foresthash modules."""


class ForestHashError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(ForestHashError, ValueError):
    """An argument violates an operation's precondition."""


class LeafRangeError(ValidationError, IndexError):
    """A leaf index lies outside ``[0, leaf_count)``."""


class ConfigurationError(ForestHashError, ValueError):
    """A configuration is inconsistent with the data or with itself."""


class FormatError(ForestHashError):
    """A file does not follow its declared format.

    ``offset`` is the byte offset (or, for text formats, the 1-based row
    number in ``row``) where parsing failed, when known.
    """

    def __init__(self, message, *, offset=None, row=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        if row is not None:
            message = f"{message} (at row {row})"
        super().__init__(message)
        self.offset = offset
        self.row = row


class CorruptionError(FormatError):
    """Stored CRC32 does not match the file contents."""


class UnsupportedVersionError(FormatError):
    """File version is not one this build can read."""
