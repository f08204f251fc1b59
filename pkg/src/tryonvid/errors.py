"""Exception types shared across the package."""


class TryOnError(Exception):
    """Base class for all package errors."""


class DimensionError(TryOnError, ValueError):
    """Array shapes or sizes do not agree."""


class DegenerateMaskError(TryOnError, ValueError):
    """The agnostic mask yields no in-mask tokens where the loss needs them."""


class ConfigurationError(TryOnError, ValueError):
    """A component was configured inconsistently (e.g. missing garment tokens)."""


class PolicyViolationError(TryOnError, ValueError):
    """A frame index outside the allowed clothing/temporal attention set was used."""


class ScheduleError(TryOnError, ValueError):
    """The noise-level ladder is malformed."""


class NonFiniteLossError(TryOnError, FloatingPointError):
    """Training produced a NaN or infinite loss."""
