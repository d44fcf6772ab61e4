"""Shared exception hierarchy for the pipeline."""


class PipelineError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(PipelineError):
    """Input data violates a structural invariant."""


class FileFormatError(PipelineError):
    """A persisted artifact does not match its declared format."""
