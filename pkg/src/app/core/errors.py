"""
Exception hierarchy shared by the library and the CLI.

Every error carries the process exit code the CLI maps it to:
0 success, 1 generic failure, 2 configuration error, 3 numerical failure.
"""
from typing import Optional


class LadaError(Exception):
    exit_code = 1


class ConfigError(LadaError):
    """Invalid, unreadable or inconsistent experiment configuration."""
    exit_code = 2


class InputError(LadaError, ValueError):
    """Invalid arguments handed to a library operation."""


class ShapeError(InputError):
    """Tensor shapes that do not line up. Never broadcast silently."""

    def __init__(self, message: str, expected=None, got=None):
        if expected is not None or got is not None:
            message = f"{message} (expected {tuple(expected) if expected is not None else '?'}, got {tuple(got) if got is not None else '?'})"
        super().__init__(message)
        self.expected = expected
        self.got = got


class NumericalError(LadaError):
    """Non-finite loss or gradient, divergence, ill-conditioned solve."""
    exit_code = 3

    def __init__(self, message: str, layer: Optional[str] = None, epoch: Optional[int] = None, stage: Optional[str] = None):
        details = []
        if stage is not None:
            details.append(f"stage={stage}")
        if layer is not None:
            details.append(f"layer={layer}")
        if epoch is not None:
            details.append(f"epoch={epoch}")
        if details:
            message = f"{message} [{', '.join(details)}]"
        super().__init__(message)
        self.layer = layer
        self.epoch = epoch
        self.stage = stage


class SingularMatrixError(NumericalError):
    def __init__(self, message: str, condition: float):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


class MemoryGuardError(LadaError):
    """Full-space state too large for the configured dense-matrix cap."""
    exit_code = 3


class StageError(LadaError):
    """A pipeline stage failed. Wraps the original error and keeps its exit code."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"Stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
