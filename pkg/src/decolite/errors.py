"""Exception types shared across the package."""


class DecoliteError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(DecoliteError, ValueError):
    """Array dimensions or shapes are incompatible."""


class InputError(DecoliteError, ValueError):
    """Argument values violate a documented precondition."""


class ConfigError(DecoliteError, ValueError):
    """A configuration value is out of its valid range."""


class UsageError(DecoliteError, ValueError):
    """An API was called in a way its contract forbids."""


class StateError(DecoliteError, RuntimeError):
    """An operation requires state that has not been initialized."""


class NumericError(DecoliteError, ArithmeticError):
    """Non-finite values appeared where finite ones are required."""


class DataError(DecoliteError, ValueError):
    """Dataset content is unusable (bad labels, all-missing series, ...)."""


class FormatError(DecoliteError, ValueError):
    """A file does not match its expected on-disk format."""


class CheckpointError(FormatError):
    """A checkpoint file is corrupt or has an unknown version."""
