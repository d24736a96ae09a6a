"""Exception types shared across the package."""


class B12MinerError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(B12MinerError):
    """Bad configuration: unknown option values, missing files, invalid fixtures."""


class FormatError(B12MinerError):
    """Input data does not match its declared format."""


class StatError(B12MinerError):
    """A statistic is undefined for the given input (empty, constant, degenerate)."""


class PipelineError(B12MinerError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage
