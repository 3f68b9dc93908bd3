"""Exception hierarchy shared across the package."""


class SynchlabError(Exception):
    """Base class for all synchlab errors."""


class ShapeError(SynchlabError):
    """Tensor extents incompatible with the requested operation."""


class NumericError(SynchlabError):
    """NaN or Inf produced where only finite values are allowed."""


class ContractError(SynchlabError):
    """An API precondition was violated by the caller."""


class FrontendError(SynchlabError):
    """Stream too short or otherwise unusable by the front-end."""


class CropError(SynchlabError):
    """Temporal crop does not fit inside the stream."""


class GenerationError(SynchlabError):
    """Synthetic clip constraints cannot be satisfied."""


class GridError(SynchlabError):
    """Offset class outside the configured grid."""


class ConfigError(SynchlabError):
    """Run configuration failed validation."""


class CheckpointError(SynchlabError):
    """Checkpoint file is malformed, truncated, or of unknown version."""


class TrainingError(SynchlabError):
    """A training step produced unusable values (NaN loss/gradients)."""


class MetricError(SynchlabError):
    """Metric undefined for the given inputs (e.g. single-class AUC)."""


class ReportError(SynchlabError):
    """A report file is malformed or missing required fields."""
