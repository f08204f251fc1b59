"""Toy-scale video virtual try-on.

Numpy implementations of the mask-guided attention loss, clothing and
temporal consistency attention, and pose-guided long-video keyframe
scheduling, wired into a tiny EDM-preconditioned torch denoiser.
"""

from tryonvid.errors import (
    ConfigurationError,
    DegenerateMaskError,
    DimensionError,
    NonFiniteLossError,
    PolicyViolationError,
    ScheduleError,
    TryOnError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "DegenerateMaskError",
    "DimensionError",
    "NonFiniteLossError",
    "PolicyViolationError",
    "ScheduleError",
    "TryOnError",
    "__version__",
]
