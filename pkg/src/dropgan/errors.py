class DimensionError(ValueError):
    """Tensor shapes or spatial sizes are incompatible with an operation."""


class TooSmallError(DimensionError):
    pass


class ConfigError(ValueError):
    pass


class InputError(ValueError):
    """Missing or malformed input data (datasets, prior files, manifests)."""


class CheckpointError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    def __init__(self, message, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path
