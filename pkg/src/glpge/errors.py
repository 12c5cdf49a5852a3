"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ArgumentError(ValueError):
    """A scalar argument is outside its documented domain."""


class ConfigError(ValueError):
    """A configuration value or key is invalid."""


class FormatError(ValueError):
    """A file could not be parsed as one of the supported formats."""


class CheckpointError(RuntimeError):
    """A checkpoint file is missing, corrupt, or from an incompatible version."""
