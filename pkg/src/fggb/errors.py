"""Exception hierarchy shared across the package."""


class FGGBError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(FGGBError, ValueError):
    """An array does not have the shape an operation expects."""


class SpecError(FGGBError, ValueError):
    """A model description is internally inconsistent."""


class DegenerateEmbeddingError(FGGBError, ValueError):
    """An embedding has zero norm, so cosine similarity is undefined."""


class ConfigError(FGGBError, ValueError):
    """Invalid configuration value or combination of values."""


class ImageReadError(FGGBError, OSError):
    """Base class for image decoding failures."""


class ImageNotFoundError(ImageReadError, FileNotFoundError):
    pass


class BadMagicError(ImageReadError):
    pass


class UnsupportedBitDepthError(ImageReadError):
    pass


class TruncatedFileError(ImageReadError):
    pass


class FormatError(FGGBError, ValueError):
    """A binary model or saliency file is malformed."""
