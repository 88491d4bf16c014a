"""Exception taxonomy shared across the package."""


class ConfigError(ValueError):
    """Raised when inputs or configuration are structurally invalid."""


class UsageError(ValueError):
    """Raised when an operation is called in a way its contract forbids."""


class TrainingError(RuntimeError):
    """Raised when a training run hits a non-recoverable numeric failure."""
