from __future__ import annotations

from typing import Any, Optional


class LipodeError(Exception):
    """Base class for every error raised by the library."""


class InvalidArgumentError(LipodeError, ValueError):
    pass


class InvalidStateError(LipodeError, RuntimeError):
    pass


class ConfigurationError(LipodeError):
    pass


class CapacityExceededError(LipodeError):
    pass


class NumericalFailureError(LipodeError):
    pass


class ConvergenceError(LipodeError):
    def __init__(self, message: str, *, last_iterate: Any = None, iterations: int = 0):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.iterations = iterations


class DivergenceError(LipodeError):
    """A state or loss became non-finite (or exploded) during a march."""

    def __init__(
        self,
        message: str,
        *,
        step: Optional[int] = None,
        epoch: Optional[int] = None,
        batch: Optional[int] = None,
    ):
        super().__init__(message)
        self.step = step
        self.epoch = epoch
        self.batch = batch


class FormatError(LipodeError, ValueError):
    def __init__(
        self,
        message: str,
        *,
        expected: Any = None,
        found: Any = None,
        offset: Optional[int] = None,
    ):
        super().__init__(message)
        self.expected = expected
        self.found = found
        self.offset = offset
