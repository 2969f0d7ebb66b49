class SMMError(Exception):
    """Base class for all package errors."""


class ConfigError(SMMError):
    """A configuration value is missing, unknown or out of range."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class InputError(SMMError, ValueError):
    """A token, target or problem string is outside the vocabulary."""


class DomainError(SMMError, ValueError):
    """The requested answer lies outside the answer range."""


class TrainingError(SMMError):
    """Training produced a non-finite value."""


class CheckpointError(SMMError):
    """A checkpoint file is unreadable or has the wrong schema."""
