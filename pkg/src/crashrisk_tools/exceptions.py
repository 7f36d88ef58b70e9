"""Exception hierarchy for crashrisk-tools.

The CLI maps these onto exit codes (see ``manifest.exit_code_for``).
"""

from __future__ import annotations


class CrashRiskError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(CrashRiskError, ValueError):
    """Input violates a documented precondition."""


class MissingDataError(CrashRiskError):
    """A stream has no data for a window that a feature needs."""

    def __init__(self, reason: str) -> None:
        super().__init__(reason)
        self.reason = reason


class MissingWeatherError(MissingDataError):
    """No weather record at or before the event instant."""


class LaneSkipped(MissingDataError):  # noqa: N818
    """Subject lane has zero volume under the skip-lane policy."""


class UndefinedStatisticError(CrashRiskError, ValueError):
    """A statistic is mathematically undefined for the given input."""


class NumericalError(CrashRiskError):
    """Numerical procedure failed (singular system, overflow)."""


class SeparationError(NumericalError):
    """Conditional likelihood is monotone: the MLE does not exist."""

    def __init__(self, variable: str, message: str | None = None) -> None:
        super().__init__(message or f"monotone likelihood driven by variable {variable!r}")
        self.variable = variable


class NonConvergenceError(CrashRiskError):
    """MCMC chains failed the R-hat threshold and strict mode is on."""


class NotIntersectionRelated(CrashRiskError):  # noqa: N818
    """Crash lies beyond the intersection influence distance."""


class UnmatchedCrashError(CrashRiskError):
    """Too few eligible control instants for a crash."""
