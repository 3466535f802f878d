"""Exception types shared across the package."""


class IllumAlignError(Exception):
    """Base class for all package-specific errors."""


class UnsupportedFormatError(IllumAlignError, ValueError):
    """File is not a 3-channel PNG or binary PPM we can decode."""


class CorruptDataError(IllumAlignError, ValueError):
    """File carries a recognized magic but the payload cannot be decoded."""


class DimensionMismatchError(IllumAlignError, ValueError):
    """Two images that must share dimensions do not."""


class ShapeMismatchError(IllumAlignError, ValueError):
    """Two arrays that must share a shape do not."""


class ImageTooSmallError(IllumAlignError, ValueError):
    """Image is smaller than the local window an operation requires."""


class InvalidFovError(IllumAlignError, ValueError):
    """Field of view outside the open interval (0, 180) degrees."""


class DegenerateBaselineError(IllumAlignError, ValueError):
    """Relative-improvement baseline is zero or negative."""


class EmptyDatasetError(IllumAlignError, ValueError):
    """No evaluable image pairs were found."""


class NonFiniteError(IllumAlignError, ArithmeticError):
    """A probed function returned NaN or infinity."""
