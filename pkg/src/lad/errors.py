"""Exception types raised across the package."""

from __future__ import annotations


class LADError(Exception):
    """Base class for all package errors."""


class DomainError(LADError, ValueError):
    """A generator was evaluated outside its admissible domain."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step

    def __reduce__(self):
        return type(self), (str(self), self.step)


class InvalidDistribution(LADError, ValueError):
    """A vector failed the probability-vector invariants."""


class SupportError(LADError, ValueError):
    """Absolute continuity / full-support requirement violated."""


class TractabilityError(LADError, ValueError):
    """Exact enumeration requested above the configured arm cap."""


class NumericalFailure(LADError, RuntimeError):
    """Non-finite loss or gradient during training."""

    def __init__(self, message: str, step: int, last_good_logits):
        super().__init__(message)
        self.step = step
        self.last_good_logits = last_good_logits

    def __reduce__(self):
        return type(self), (str(self), self.step, self.last_good_logits)


class LandscapeDegeneracyError(LADError, ValueError):
    """Checkpoint cloud spans fewer than two directions."""


class ConfigError(LADError, ValueError):
    """Run configuration failed to parse or validate."""


class RunFailed(LADError, RuntimeError):
    """A run inside a sweep or comparison failed; ``label`` names which."""

    def __init__(self, label: str, cause: BaseException):
        super().__init__(f"{label}: {cause}")
        self.label = label
        self.cause = cause

    def __reduce__(self):
        return type(self), (self.label, self.cause)
