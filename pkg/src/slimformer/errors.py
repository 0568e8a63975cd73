"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid model/task/experiment configuration (CLI exit code 2)."""


class PlanError(ValueError):
    """Inconsistent or out-of-range approximation plan (CLI exit code 3)."""


class InfeasibleError(RuntimeError):
    """A requested constraint cannot be satisfied (CLI exit code 3)."""


class StageError(RuntimeError):
    """Pipeline stage failure; carries the stage name for diagnostics."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
