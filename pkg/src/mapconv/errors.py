"""Exception types shared across the package."""


class MapconvError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(MapconvError, ValueError):
    """Array shapes or sizes are inconsistent with what an operation needs."""


class ParameterError(MapconvError, ValueError):
    """A scalar parameter (stride, order, kernel size, ...) is out of range."""


class InvalidCoordinateError(MapconvError, ValueError):
    """A coordinate is non-finite or outside its documented domain."""


class FormatError(MapconvError, ValueError):
    """A file does not conform to the format it claims to be."""
