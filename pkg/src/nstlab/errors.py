"""Exception hierarchy shared by every engine module."""


class EngineError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(EngineError):
    """Operand shapes are incompatible with the requested operation."""


class GeometryError(EngineError):
    """Convolution/pooling geometry produces an empty or invalid output."""


class ContractError(EngineError):
    """An argument violates a documented precondition."""


class NumericError(EngineError):
    """A non-finite value appeared where only finite values are allowed."""


class GraphError(EngineError):
    """The differentiation tape was used inconsistently."""


class ValidationError(EngineError):
    """A network specification failed validation."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class WeightError(EngineError):
    """A weight store does not match the network it is paired with."""


class WeightFormatError(EngineError):
    """A weight file does not conform to the NSTW binary format."""


class BadMagicError(WeightFormatError):
    pass


class VersionMismatchError(WeightFormatError):
    pass


class TruncatedFileError(WeightFormatError):
    pass


class EntrySizeError(WeightFormatError):
    pass


class ImageError(EngineError):
    """Base class for image I/O failures."""


class UnsupportedFormatError(ImageError):
    pass


class CorruptImageError(ImageError):
    pass


class ConfigError(EngineError):
    """A job configuration file could not be parsed or validated."""


class DivergenceError(EngineError):
    """A training run left the stable loss regime."""
