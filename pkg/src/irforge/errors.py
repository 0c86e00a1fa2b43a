"""Exception types raised across irforge."""


class IrforgeError(Exception):
    """Base class for every error raised by this package."""


# raster I/O
class MalformedFile(IrforgeError, ValueError):
    pass


class UnsupportedDepth(IrforgeError, ValueError):
    pass


class UnsupportedColorType(IrforgeError, ValueError):
    pass


class FormatChannelMismatch(IrforgeError, ValueError):
    pass


class OutOfRange(IrforgeError, ValueError):
    pass


# translation
class ChannelMismatch(IrforgeError, ValueError):
    pass


# features
class ImageTooSmall(IrforgeError, ValueError):
    pass


class MalformedFeatureFile(IrforgeError, ValueError):
    pass


class DimensionMismatch(IrforgeError, ValueError):
    pass


# metrics
class ShapeMismatch(IrforgeError, ValueError):
    pass


class SourceMismatch(IrforgeError, ValueError):
    pass


class InsufficientSamples(IrforgeError, ValueError):
    pass


class NumericalFailure(IrforgeError, ArithmeticError):
    pass


class NonFiniteInput(IrforgeError, ValueError):
    pass


class EmptySet(IrforgeError, ValueError):
    pass


# pairing / pipeline
class MissingRoot(IrforgeError, FileNotFoundError):
    pass


class EmptyPool(IrforgeError, ValueError):
    pass


class ModalityUnavailable(IrforgeError, ValueError):
    pass


class UnknownTask(IrforgeError, ValueError):
    pass


class MissingExternalOutput(IrforgeError, FileNotFoundError):
    pass


class ConfigError(IrforgeError, ValueError):
    pass
