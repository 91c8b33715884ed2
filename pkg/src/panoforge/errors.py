"""Exception types shared across the package."""


class PanoError(Exception):
    """Base class for all panoforge errors."""


class DataError(PanoError, ValueError):
    """Malformed or inconsistent input data (shapes, ranges, files)."""


class GeometryError(DataError):
    """Invalid geometric configuration (camera outside scene, bad ray, ...)."""


class NumericalError(PanoError, ArithmeticError):
    """A numerical procedure failed, e.g. training diverged to NaN."""
