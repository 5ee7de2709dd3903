"""Turn a vision-language checkpoint plus images into detector dataset files."""

from .errors import ArgumentError, ExtractError, FormatError, JobError
from .job import ExtractJob

__all__ = ["ArgumentError", "ExtractError", "ExtractJob", "FormatError", "JobError"]
