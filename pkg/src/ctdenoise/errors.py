"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """An invalid parameter or configuration value."""


class DataError(RuntimeError):
    """Unreadable or inconsistent input data."""


class TrainingDiverged(RuntimeError):
    """Training produced a non-finite loss."""
