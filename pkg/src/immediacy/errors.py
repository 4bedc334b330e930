"""Exception types shared across the package."""

from __future__ import annotations


class ImmediacyError(Exception):
    """Base class for all package-specific errors."""


class ManifestError(ImmediacyError):
    """A manifest file failed to parse or violated a schema invariant.

    Carries the offending line number when the problem is tied to a
    specific record.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(ImmediacyError):
    """Invalid configuration value or unknown option name."""


class UndefinedStatisticError(ImmediacyError):
    """A statistic is undefined for the given input (e.g. zero variance)."""


class StageError(ImmediacyError):
    """A perception stage failed; tagged with the stage and frame index."""

    def __init__(self, stage: str, message: str, frame_index: int | None = None):
        self.stage = stage
        self.frame_index = frame_index
        where = stage if frame_index is None else f"{stage}, frame {frame_index}"
        super().__init__(f"[{where}] {message}")


class EmptyDatasetError(ImmediacyError):
    """No samples remain after filtering or joining."""


class TrainingDivergedError(ImmediacyError):
    """Loss became non-finite during optimization."""
