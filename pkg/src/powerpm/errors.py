"""Exception types shared across the package."""


class PowerPMError(Exception):
    """Base class for all package-specific errors."""


class SchemaError(PowerPMError):
    """A CSV file or config tree does not match its documented schema."""


class IngestionError(PowerPMError):
    """Raw data violates an ingestion contract (ordering, duplicates, ...)."""


class EncodingError(PowerPMError):
    """An exogenous value cannot be mapped to a categorical code."""


class SplitError(PowerPMError):
    """A chronological split cannot be formed from the given windows."""


class GraphError(PowerPMError):
    """The hierarchy graph is inconsistent or a node is missing data."""


class MaskError(PowerPMError):
    """A mask specification is degenerate or inconsistent."""


class NumericError(PowerPMError):
    """A non-finite value or zero norm appeared where it must not."""


class BatchError(PowerPMError):
    """A training batch cannot be assembled from the available windows."""


class TaskError(PowerPMError):
    """A downstream task is misconfigured or has no usable data."""


class ConfigError(PowerPMError):
    """An experiment config is invalid.

    ``key_path`` points at the offending entry, e.g. ``"pretrain.steps"``.
    """

    def __init__(self, message: str, key_path: str = ""):
        super().__init__(message)
        self.key_path = key_path


class CheckpointError(PowerPMError):
    """A checkpoint file is missing, truncated, or from a different build."""
