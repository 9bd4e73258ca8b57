"""Exception types raised across the package."""


class MDSFError(Exception):
    """Base class for all package errors."""


class DimensionError(MDSFError, ValueError):
    """Shapes of operands are incompatible."""


class ConfigError(MDSFError, ValueError):
    """An invalid configuration value (kernel size, axis, dilation, level)."""


class DomainError(MDSFError, ValueError):
    """An input lies outside the mathematical domain of an operation."""


class UsageError(MDSFError, RuntimeError):
    """An API was called in an unsupported way (e.g. backward on a non-scalar)."""


class GenerationError(MDSFError, RuntimeError):
    """Synthetic scene generation could not satisfy its constraints."""


class TrainingError(MDSFError, RuntimeError):
    """Training produced a non-finite loss."""


class FormatError(MDSFError, ValueError):
    """A serialized file does not match its declared format."""
