"""Exception types shared across the package."""


class ShapeError(ValueError):
    """A tensor or operator received incompatibly shaped input."""


class ArityError(ValueError):
    """A predicate operator was applied at an invalid arity."""


class ConfigError(ValueError):
    """A configuration file or option could not be interpreted."""


class DatasetError(ValueError):
    """A dataset file is malformed."""


class CheckpointError(RuntimeError):
    """A checkpoint file is missing pieces, truncated, or from another format version."""


class DivergenceError(RuntimeError):
    """Training collapsed past the configured guard threshold."""
