"""Exception hierarchy. Every error carries a machine-readable ``kind``."""


class VoladvError(Exception):
    kind = "error"


class ShapeError(VoladvError, ValueError):
    kind = "shape"


class UnsupportedModelError(VoladvError, TypeError):
    kind = "unsupported-model"


class TrainingError(VoladvError, RuntimeError):
    kind = "training"


class ConfigError(VoladvError, ValueError):
    kind = "config"


class UndefinedMetricError(VoladvError, ValueError):
    kind = "undefined-metric"
