"""Exception types shared across the simulator."""

from __future__ import annotations


class MzlockError(Exception):
    """Base class for simulator errors."""


class ConfigError(MzlockError):
    """Invalid configuration; carries every violated constraint."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.violations))


class CalibrationError(MzlockError):
    """Fringe calibration could not observe a full fringe."""


class VisibilityUndefinedError(MzlockError):
    """Visibility requested for zero total counts."""


class FitError(MzlockError):
    """Fringe fit failed (degenerate span or singular system)."""


class LockLostError(MzlockError):
    """Phase lock lost during a run that requires it."""
