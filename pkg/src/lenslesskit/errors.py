"""Exception types shared across the toolkit."""


class LenslessKitError(Exception):
    """Base class for all toolkit errors."""


class ShapeMismatchError(LenslessKitError, ValueError):
    """Array shapes are incompatible with the requested operation."""


class ImaginaryResidueError(LenslessKitError, ArithmeticError):
    """Inverse FFT of a supposedly real-signal spectrum left too much imaginary mass."""


class InvalidParamsError(LenslessKitError, ValueError):
    """A parameter value violates its documented contract."""


class MissingBackgroundError(LenslessKitError, ValueError):
    """A background estimate is required by the selected mode but was not provided."""


class NonInvertibleOperatorError(LenslessKitError, ValueError):
    """The optical transfer function has (near-)zero entries; exact inversion is undefined."""


class OutOfRangeError(LenslessKitError, ValueError):
    """A scalar argument (e.g. a step index) lies outside its valid range."""


class EmptyDatasetError(LenslessKitError, ValueError):
    """The dataset contains no usable records."""


class EmptyParameterSetError(LenslessKitError, ValueError):
    """Training was requested for a pipeline with no learnable parameters."""


class ImageTooSmallError(LenslessKitError, ValueError):
    """Image is smaller than the metric's window."""


class ArrayIOError(LenslessKitError, OSError):
    """Array file could not be read or written."""


class BadMagicError(ArrayIOError):
    """File does not start with the expected magic bytes."""


class BadDimsError(ArrayIOError):
    """Header dimensions are invalid or inconsistent with the payload length."""


class ConfigError(LenslessKitError, ValueError):
    """Run configuration failed schema validation."""
