"""Exception types shared across the toolkit."""


class ToolkitError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(ToolkitError):
    """Invalid input data or configuration (CLI exit code 1)."""


class DataFormatError(ValidationError):
    """A file exists but does not conform to its expected format."""


class Mat5Error(DataFormatError):
    """Malformed or unsupported MAT-v5 content."""


class DegenerateInputError(ValidationError):
    """Structurally valid input that is numerically unusable (e.g. an all-zero frame)."""


class DimensionMismatchError(ValidationError):
    """Vector/model dimensionality disagreement."""
