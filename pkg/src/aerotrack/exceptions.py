"""Exception hierarchy shared by all modules."""


class AerotrackError(Exception):
    """Base class for all package errors."""


class ConfigError(AerotrackError):
    """Invalid configuration or parameter value."""


class DataError(AerotrackError):
    """Malformed or inconsistent input data."""


class ParseError(DataError):
    """A record in an input file could not be parsed."""


class ValidationError(DataError):
    """A parsed record violates a schema invariant."""


class ProjectionError(AerotrackError):
    """A point lies behind the camera."""


class NoIntersectionError(AerotrackError):
    """A viewing ray does not hit the ground plane in front of the camera."""


class DegenerateConfigurationError(AerotrackError):
    """Point configuration is rank deficient (collinear or coincident)."""


class SolverError(AerotrackError):
    """An iterative solver failed to converge."""

    def __init__(self, message, iterations=None):
        super().__init__(message)
        self.iterations = iterations


class PreconditionError(AerotrackError):
    """An operation was called with inputs outside its domain."""


class UnderConstrainedError(PreconditionError):
    """Too few observations for a well-posed fit."""


class InitializationError(AerotrackError):
    """No initial estimate could be derived from the observation."""


class StateError(AerotrackError):
    """Filter state is numerically invalid."""


class QueryError(AerotrackError):
    """An analytics query references unknown entities."""


class NotFittedError(AerotrackError, AttributeError):
    """Estimator used before ``fit``."""
