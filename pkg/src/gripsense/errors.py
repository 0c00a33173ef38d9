"""Exception types shared across the package."""


class ValidationError(ValueError):
    """An argument or configuration violates a documented constraint."""


class FormatError(ValueError):
    """A file does not have the expected binary or text layout."""


class UnsupportedEncodingError(FormatError):
    """A well-formed file uses an encoding this package does not read."""


class TruncatedFileError(OSError):
    """A file ended before all declared content could be read."""
