"""Exception types shared across the package."""


class ReconError(Exception):
    """Base class for all package errors."""


class InvalidInputError(ReconError, ValueError):
    """An argument has the wrong shape, type, or a non-finite value."""


class InvalidParamsError(ReconError, ValueError):
    """Mask or model parameters are infeasible."""


class DegenerateInputError(ReconError, ValueError):
    """Input carries no usable signal (e.g. an all-zero ACS region)."""


class DivergenceError(ReconError, RuntimeError):
    """An iterative solver or training run produced non-finite or exploding values."""


class IngestError(ReconError, OSError):
    """A volume file is missing, truncated, or has inconsistent arrays."""


class CheckpointError(ReconError):
    """Checkpoint failed its integrity or version check."""


class ConfigMismatchError(ReconError, ValueError):
    """A checkpoint was loaded into an incompatible model configuration."""
