"""
Error types raised across TKIL.

All domain errors derive from TKILError, itself a ValueError, so callers that
only care about "bad input" can keep catching ValueError.
"""


class TKILError(ValueError):
    """Base class for every TKIL domain error."""


class IndivisibleClasses(TKILError):
    """Class count cannot be split evenly into the requested number of tasks."""


class OutOfRangeTask(TKILError):
    """Task index outside 1..N."""


class ClassCollision(TKILError):
    """A class offered to the memory is already stored."""


class EmptySource(TKILError):
    """Nothing to draw a batch from."""


class ShapeMismatch(TKILError):
    """Input or logit shapes do not match the model contract."""


class HeterogeneousModels(TKILError):
    """Models cannot be averaged because their architectures differ."""


class LayoutMismatch(TKILError):
    """Flat weight vector does not fit the target architecture."""


class LabelOutOfRange(TKILError):
    """Label index is not covered by the classifier head."""


class EmptyBatch(TKILError):
    """An operation received a batch with no samples."""


class ZeroGradient(TKILError):
    """A gradient vector is (numerically) zero, so its direction is undefined."""


class MissingTaskExemplars(TKILError):
    """The memory holds no exemplars for the requested task."""


class ConfigInvalid(TKILError):
    """Configuration value is missing or out of range."""


class EmptyBundle(TKILError):
    """A results bundle holds no stage reports."""


class OutputExists(TKILError, FileExistsError):
    """A run directory with the same config fingerprint already holds results."""
