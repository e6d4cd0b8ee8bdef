"""Exception types shared across the package."""


class ValidationError(ValueError):
    """An input violates a documented precondition or invariant."""


class DataFormatError(ValidationError):
    """A data file does not match its declared binary format."""


class ConfigError(ValidationError):
    """An experiment configuration file is malformed or inconsistent."""


class TrainingError(RuntimeError):
    """Training aborted (divergent loss or non-finite quantities)."""
