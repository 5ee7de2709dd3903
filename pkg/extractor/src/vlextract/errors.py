class ExtractError(Exception):
    """Base class for everything this package raises on purpose."""


class ArgumentError(ExtractError):
    """A job field is missing, malformed, or self-contradictory."""


class JobError(ExtractError):
    """The job is well-formed but cannot run (model or data unavailable)."""


class FormatError(ExtractError):
    """A file does not match the dataset format."""
