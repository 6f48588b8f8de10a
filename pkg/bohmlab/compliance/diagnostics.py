"""Per-stage numerical diagnostics: node regularizations, speed clamps, trajectory counts."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

from ..core.ensemble import TrajectoryEnsemble

logger = logging.getLogger(__name__)


@dataclass
class StageDiagnostics:
    """Counters for one stage of a run."""
    stage: str
    started_at: float = field(default_factory=time.time)
    ended_at: float | None = None
    trajectories: int = 0
    regularized_points: int = 0
    node_encounters: int = 0
    clamp_events: int = 0

    @property
    def duration(self) -> float:
        end = self.ended_at or time.time()
        return end - self.started_at

    def to_dict(self) -> dict:
        # no wall-clock fields in reports
        return {
            "stage": self.stage,
            "trajectories": self.trajectories,
            "regularized_points": self.regularized_points,
            "node_encounters": self.node_encounters,
            "clamp_events": self.clamp_events,
        }


class DiagnosticsCollector:
    """Collects diagnostics across the stages of one run."""

    def __init__(self):
        self._stages: dict[str, StageDiagnostics] = {}

    def start_stage(self, stage: str) -> None:
        self._stages[stage] = StageDiagnostics(stage=stage)

    def end_stage(self, stage: str) -> None:
        d = self._stages.get(stage)
        if d:
            d.ended_at = time.time()
            logger.info("Stage '%s' finished in %.2fs", stage, d.duration)

    def _get(self, stage: str) -> StageDiagnostics:
        if stage not in self._stages:
            self.start_stage(stage)
        return self._stages[stage]

    def record_ensemble(self, stage: str, ensemble: TrajectoryEnsemble) -> None:
        d = self._get(stage)
        d.trajectories += len(ensemble)
        d.regularized_points += ensemble.regularized_points
        d.node_encounters += ensemble.node_encounters
        d.clamp_events += ensemble.clamp_events

    def record_regularized(self, stage: str, count: int) -> None:
        self._get(stage).regularized_points += count

    @property
    def clamp_events(self) -> int:
        return sum(d.clamp_events for d in self._stages.values())

    def get_aggregate(self) -> dict:
        """Totals across stages, plus the per-stage breakdown."""
        stages = self._stages.values()
        return {
            "trajectories": sum(d.trajectories for d in stages),
            "regularized_points": sum(d.regularized_points for d in stages),
            "node_encounters": sum(d.node_encounters for d in stages),
            "clamp_events": self.clamp_events,
            "stages": {name: d.to_dict() for name, d in self._stages.items()},
        }
