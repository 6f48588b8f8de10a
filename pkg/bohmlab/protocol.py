from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Any

if TYPE_CHECKING:
    from .core.ensemble import Trajectory


class ResultMethod(str, Enum):
    PUSHFORWARD = "density-pushforward"
    SAMPLED = "trajectory-sampled"


class InitRule(str, Enum):
    EQUILIBRIUM = "equilibrium"
    UNIFORM_IN_SLITS = "uniform_in_slits"


class InterpMethod(str, Enum):
    SPLINE = "spline"
    TRIG = "trig"


@dataclass(frozen=True)
class GateResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "passed": self.passed,
            "value": self.value,
            "threshold": self.threshold,
            "detail": self.detail,
        }


@dataclass(frozen=True)
class Tolerances:
    """Gate thresholds; every field can be overridden from the [tolerances] config table."""

    eigen_residual: float = 1e-8
    projective_distance: float = 1e-6
    tracking: float = 1e-6
    schrodinger_residual: float = 1e-4
    branch_distance: float = 1e-3
    tracking_widths: float = 3.0
    norm_drift: float = 1e-9
    boundary: float = 1e-6
    fringe_contrast: float = 5.0
    bin_mass: float = 2e-3
    bilinearity: float = 1e-8
    continuity: float = 1e-4
    velocity: float = 1e-8
    binomial_sigmas: float = 3.0


def below(name: str, value: float, threshold: float, detail: str = "") -> GateResult:
    """Gate that passes iff value < threshold (NaN fails)."""
    v = float(value)
    return GateResult(name=name, passed=bool(v < threshold), value=v, threshold=float(threshold), detail=detail)


def above(name: str, value: float, threshold: float, detail: str = "") -> GateResult:
    v = float(value)
    return GateResult(name=name, passed=bool(v > threshold), value=v, threshold=float(threshold), detail=detail)


# ── Errors ──


class BohmlabError(Exception):
    """Base class for every error raised by bohmlab."""


class ConfigError(BohmlabError):
    def __init__(self, message: str, *, field_name: str = "", problems: list[str] | None = None):
        self.field_name = field_name
        self.problems = problems or [message]
        super().__init__(message)


class GridMismatchError(BohmlabError):
    pass


class DegenerateStateError(BohmlabError):
    pass


class PropagationError(BohmlabError):
    pass


class UnknownScenarioError(BohmlabError):
    pass


class TimeMismatchError(BohmlabError):
    pass


class IntegrationError(BohmlabError):
    """Raised when a trajectory meets a non-finite velocity; carries what was integrated so far."""

    def __init__(self, message: str, *, partial: Trajectory | None = None):
        self.partial = partial
        super().__init__(message)
