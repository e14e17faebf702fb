"""Exception types shared across the package."""


class KvqError(Exception):
    """Base class for all kvqlab errors."""


class ShapeError(KvqError, ValueError):
    """Operands have incompatible or invalid dimensions."""


class SpecError(KvqError, ValueError):
    """Invalid quantization or cache specification."""


class FormatError(KvqError, ValueError):
    """Malformed serialized data (file or code stream)."""


class StateError(KvqError, RuntimeError):
    """Operation not valid in the object's current state."""


class ConfigError(KvqError, ValueError):
    """Invalid experiment, policy, or shape configuration."""
