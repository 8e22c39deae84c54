"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input data or configuration violates a documented precondition."""


class ManifestParseError(ValidationError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ShapeError(ValueError):
    pass


class UndefinedMetricError(ValueError):
    """Metric is undefined for the given input (e.g. only one class present)."""


class CheckpointError(RuntimeError):
    pass


class TrainingError(RuntimeError):
    """Training aborted, e.g. because a loss component became non-finite."""
