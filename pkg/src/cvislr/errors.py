"""Exception taxonomy shared across the package."""


class CvislrError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(CvislrError, ValueError):
    """Tensor extents do not satisfy an operation's requirements."""


class NumericError(CvislrError, ValueError):
    """Numeric input outside an operation's valid domain (NaN, +inf)."""


class GeometryError(CvislrError, ValueError):
    """Clip or token-grid geometry incompatible with the model layout."""


class FormatError(CvislrError, ValueError):
    """A binary or text file does not match its declared format."""


class AlignmentError(CvislrError, ValueError):
    """Sample identifiers disagree between inputs that must be joined."""


class ContractError(CvislrError, ValueError):
    """An argument violates a documented precondition."""
