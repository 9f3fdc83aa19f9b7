"""
Exceptions shared across the package.

The CLI maps each of them to its own exit code (the EXIT_* constants in harness).
"""
from typing import Optional


class NoBackTrackError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(NoBackTrackError, ValueError):
    """Inconsistent dimensions, invalid ranges or an invalid run configuration."""


class DatasetError(NoBackTrackError):
    """A corpus could not be read or is unusable."""


class DivergenceError(NoBackTrackError):
    """A state or parameter became non-finite or exceeded the magnitude guard."""

    def __init__(self, quantity: str, step: Optional[int] = None, value: Optional[float] = None):
        self.quantity = quantity
        self.step = step
        self.value = value
        where = f" at step {step}" if step is not None else ""
        detail = f" (max |value| = {value:.3g})" if value is not None else ""
        super().__init__(f"divergence in {quantity}{where}{detail}")


class CheckFailure(NoBackTrackError):
    """One or more self-checks failed; `failures` lists (name, observed, expected)."""

    def __init__(self, failures):
        self.failures = list(failures)
        names = ", ".join(name for name, _, _ in self.failures)
        super().__init__(f"failed checks: {names}")
