"""Exception types shared across the package."""


class EvpError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(EvpError):
    """Operand shapes do not conform to an operation's rule."""


class NumericError(EvpError):
    """A computation produced non-finite values or lost numeric validity."""


class FormatError(EvpError):
    """A serialized artifact (tensor file, checkpoint, manifest) is malformed."""


class ConfigError(EvpError):
    """A configuration is internally inconsistent or unsupported."""
