"""Exception types shared across the package."""


class UnitsError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(UnitsError, ValueError):
    """A file violates its declared on-disk format."""


class IngestionError(UnitsError, ValueError):
    """A value read from a file is unusable (non-finite, unparsable)."""


class ShapeError(UnitsError, ValueError):
    """Array or payload shapes do not line up."""


class ParameterError(UnitsError, ValueError):
    """An argument is outside its documented domain."""


class StateError(UnitsError, RuntimeError):
    """An operation was called on an object in the wrong lifecycle state."""


class NotFoundError(UnitsError, KeyError):
    """A registry lookup failed."""


class VersionError(UnitsError, ValueError):
    """A serialized document declares an unsupported schema version."""


class DivergenceError(UnitsError, ArithmeticError):
    """Training produced a non-finite loss or gradient."""
