"""Exception hierarchy for caelab."""

from typing import Dict, Optional


class CaeLabError(Exception):
    """Base class for every error raised by the library."""


class ConfigError(CaeLabError):
    """Invalid, unparsable or incomplete configuration."""

    def __init__(self, message: str, line: Optional[int] = None, key: Optional[str] = None):
        self.line = line
        self.key = key
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SignalError(CaeLabError, ValueError):
    """A signal violates an operation precondition (power, shape, stage)."""


class ChannelError(SignalError):
    """Channel profile, shape or invertibility problem."""


class DetectionError(CaeLabError):
    """Detector cannot run on the requested problem size."""


class AutodiffError(CaeLabError):
    """Misuse of the differentiation engine."""


class TrainingError(CaeLabError):
    """Training cannot proceed; `record` holds the diagnostic snapshot."""

    def __init__(self, message: str, record: Optional[Dict] = None):
        self.record = record or {}
        super().__init__(message)


class GradientCheckError(CaeLabError):
    """A finite-difference check exceeded its tolerance."""


class CheckpointError(CaeLabError):
    """Checkpoint file missing or malformed."""
