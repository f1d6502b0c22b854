"""Exception hierarchy shared across the package."""


class StylebackError(Exception):
    """Base class for all package-specific errors."""


class ArgumentError(StylebackError, ValueError):
    """A caller violated an operation's precondition."""


class ConfigError(StylebackError):
    """Invalid or inconsistent configuration; fatal before any heavy work."""


class NumericError(StylebackError, ArithmeticError):
    """Non-finite values or a diverging optimization."""


class UndefinedMetricError(StylebackError):
    """A metric is undefined for the given inputs (e.g. single-class mask)."""


class PipelineStageError(StylebackError):
    """A pipeline stage failed; carries the stage tag and scene id."""

    def __init__(self, stage: str, scene_id: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed for scene '{scene_id}': {cause}")
        self.stage = stage
        self.scene_id = scene_id
        self.cause = cause
