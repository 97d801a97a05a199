"""Exception hierarchy shared by all rfmlab modules.

Every error carries a short machine-parsable ``category`` used by the CLI
for its one-line failure output.
"""


class RfmLabError(Exception):
    """Base class for all errors raised by this package."""

    category = "error"


class InvalidImageError(RfmLabError):
    category = "invalid-image"


class ContractViolationError(RfmLabError):
    category = "contract-violation"


class BatchShapeError(RfmLabError):
    category = "batch-shape"


class GradientUnavailableError(RfmLabError):
    category = "gradient-unavailable"


class UnsupportedArchitectureError(RfmLabError):
    category = "unsupported-architecture"


class TrainingDivergedError(RfmLabError):
    category = "training-diverged"


class ChecksumError(RfmLabError):
    category = "checksum"


class EmptyDatasetError(RfmLabError):
    category = "empty-dataset"


class EmptyAggregateError(RfmLabError):
    category = "empty-aggregate"


class DegenerateMapError(RfmLabError):
    category = "degenerate-map"


class DegenerateLandmarksError(RfmLabError):
    category = "degenerate-landmarks"


class UndefinedMetricError(RfmLabError):
    category = "undefined-metric"


class UndefinedCoverageError(RfmLabError):
    category = "undefined-coverage"


class ConfigError(RfmLabError):
    category = "config"
