"""Exception types shared across the library."""


class CapsForensicsError(Exception):
    """Base class for all library-specific errors."""


class DimensionError(CapsForensicsError, ValueError):
    """Shapes or sizes incompatible with an operation's contract."""


class ParameterError(CapsForensicsError, ValueError):
    """Invalid hyperparameter or argument value."""


class AutodiffError(CapsForensicsError, RuntimeError):
    """Misuse of the reverse-mode machinery (non-scalar loss, replayed tape)."""


class NumericalError(CapsForensicsError, ArithmeticError):
    """NaN or Inf reached a value that must stay finite."""


class WeightFormatError(CapsForensicsError, ValueError):
    """Malformed weight/checkpoint file, or tensors that do not match the model."""


class ConfigError(CapsForensicsError, ValueError):
    """Invalid run configuration."""


class DataError(CapsForensicsError, ValueError):
    """Manifest or image data problem."""
