"""Exception hierarchy shared by every sqnet module."""


class SqnetError(Exception):
    """Base class for all errors raised by sqnet."""


class DimensionError(SqnetError, ValueError):
    pass


class CompatibilityError(SqnetError, ValueError):
    """Two sketches (or a sketch and a map) cannot be combined."""


class UnsupportedPooling(SqnetError, ValueError):
    pass


class InvalidRemoval(SqnetError, ValueError):
    pass


class ParseError(SqnetError, ValueError):
    def __init__(self, message, position=None):
        if position is not None:
            message = f"{message} (at {position})"
        super().__init__(message)
        self.position = position


class VersionError(SqnetError, ValueError):
    pass


class SymmetryError(SqnetError, ValueError):
    pass


class ConvergenceError(SqnetError, RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class SingularError(SqnetError, ArithmeticError):
    pass


class NotPositiveDefinite(SqnetError, ArithmeticError):
    pass


class EmptyDataset(SqnetError, ValueError):
    pass


class MetricError(SqnetError, ValueError):
    pass


class TrainingError(SqnetError, RuntimeError):
    def __init__(self, message, step=None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class UnsupportedMap(SqnetError, TypeError):
    pass


class DecodeError(SqnetError, RuntimeError):
    pass


class StateError(SqnetError, RuntimeError):
    pass


class CalibrationError(SqnetError, ValueError):
    pass


class DomainError(SqnetError, ValueError):
    pass


class KindError(SqnetError, TypeError):
    pass


class InsufficientData(SqnetError, ValueError):
    pass


class ConfigError(SqnetError, ValueError):
    pass


class DataError(SqnetError, ValueError):
    """Input data could not be read or interpreted."""


class IoError(SqnetError, OSError):
    """A dataset or config file could not be read."""
