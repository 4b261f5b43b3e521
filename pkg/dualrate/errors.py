"""
Exception hierarchy shared by every layer of the lab.
The CLI maps these onto exit codes (2 for configuration, 3 for divergence).
"""

from __future__ import annotations

from typing import Any, Optional


class DualRateError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(DualRateError, ValueError):
    pass


class TimeOrderingError(DualRateError, ValueError):
    """Raised when two diffusion times are passed in the wrong order."""


class TapeError(DualRateError, RuntimeError):
    pass


class SequencingError(DualRateError, RuntimeError):
    """Raised when alternating distillation updates are called out of turn."""


class CheckpointError(DualRateError, IOError):
    pass


class EvaluationError(DualRateError, ValueError):
    pass


class NumericalDivergenceError(DualRateError, FloatingPointError):
    def __init__(self, message: str, state: Optional[Any] = None) -> None:
        super().__init__(message)
        self.state = state
