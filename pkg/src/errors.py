"""
Exception hierarchy for the pipeline.

Every `PipelineError` carries the process exit code and a short machine-readable
code, so the command-line front-end can turn it into a single parsable line.
"""


class PipelineError(Exception):
    """Base class of all expected pipeline failures."""
    exit_code: int = 1
    code: str = "pipeline_error"


class ConfigError(PipelineError):
    """Invalid or inconsistent configuration."""
    exit_code = 2
    code = "config_error"


class MissingArtifactError(PipelineError):
    """An upstream stage output is missing or stale."""
    exit_code = 3
    code = "missing_artifact"


class DataValidationError(PipelineError):
    """Input data violates the data model."""
    exit_code = 4
    code = "data_validation"


class ShapeError(ValueError):
    """Operand shapes are incompatible for a tensor operation."""

    def __init__(self, op: str, left: tuple[int, ...], right: tuple[int, ...]) -> None:
        super().__init__(f"{op}: incompatible shapes {left} and {right}")
        self.op = op
        self.left = left
        self.right = right
