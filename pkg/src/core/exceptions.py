"""
Custom Exceptions

Domain-specific exceptions for PatientAlign-Lite. Raising typed exceptions
allows the pipeline to tag failures with the stage that produced them and the
CLI to map them to a clean exit status.
"""


class PatientAlignError(Exception):
    """Base class for every error raised by the reconstruction toolkit."""


class InvalidInputError(PatientAlignError, ValueError):
    """Raised when an argument violates an operation's precondition."""


class InvalidTransformError(InvalidInputError):
    """Raised when a rotation is not orthonormal with determinant +1."""


class InsufficientCorrespondencesError(PatientAlignError):
    """Raised when fewer than three point pairs are available for registration."""


class DegenerateGeometryError(PatientAlignError):
    """Raised when correspondence sources are coincident or collinear."""


class NoCommonMarkersError(PatientAlignError):
    """Raised when two scenes share no marker id to align on."""


class MarkerNotFoundError(PatientAlignError):
    """Raised when the requested reference marker was never lifted to 3D."""


class ParamsMismatchError(PatientAlignError):
    """Raised when heightmaps built on different grids are combined."""


class ConfigError(PatientAlignError):
    """Raised when a pipeline configuration file cannot be parsed or validated."""
