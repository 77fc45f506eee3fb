"""Exception types shared across the package."""


class OdpError(Exception):
    """Base class for errors raised by this package."""


class ParameterError(OdpError, ValueError):
    """Invalid parameter (nonpositive scale, epsilon <= 0, bad sizes, ...)."""


class ConfigurationError(OdpError, ValueError):
    """A query precondition on the database/parameter combination is violated."""


class BoundsError(OdpError, IndexError):
    """External-memory access outside an array. Always a bug, never data."""


class TraceFormatError(OdpError, ValueError):
    """A serialized access trace could not be parsed."""


class DatasetError(OdpError, ValueError):
    """Malformed dataset file; the message names the offending line."""
