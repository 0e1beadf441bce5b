"""Exception types shared across the package."""


class AlqaError(Exception):
    """Base class for all package errors."""


class ParameterError(AlqaError):
    """A configuration value or argument is outside its documented domain."""


class ShapeError(AlqaError):
    """An array has the wrong dimensionality or an unusable size."""


class EmptyRegionError(AlqaError):
    """An operation that needs foreground pixels received none."""


class ManifestMismatchError(AlqaError):
    """An extractor produced a feature count that disagrees with the manifest."""


class TrainingError(AlqaError):
    """Model fitting could not proceed (bad labels, divergence, ...)."""


class DatabaseError(AlqaError):
    """Problems loading or saving a test-case database."""


class DatabaseNotFoundError(DatabaseError):
    """The database directory or a required file is missing."""
