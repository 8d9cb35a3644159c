"""Active keyframe gating.

Two independent batches accumulate between oracle calls. A coverage keyframe
is admitted only when its visible-cell overlap ratio against every keyframe
already in the current batch stays strictly below the threshold. A task
keyframe is admitted whenever a detection matches the instruction's target
categories, bypassing the coverage test. Batches drain whole once they reach
capacity, and each admitted keyframe is released exactly once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .perception import Detection, Observation
from .world import Pose

KIND_COVERAGE = "coverage"
KIND_TASK = "task"


@dataclass
class KeyframeConfig:
    tau_cov: float = 0.5
    coverage_capacity: int = 3
    task_capacity: int = 3
    max_keyframes: int = 5  # hard cap per batch regardless of capacity


@dataclass
class Keyframe:
    kind: str
    timestamp: float
    pose: Pose
    visible_cells: np.ndarray
    detections: list[Detection] = field(default_factory=list)


def overlap_ratio(new_cells: np.ndarray, existing_cells: np.ndarray) -> float:
    """|new intersect existing| / |new|; 0.0 when the new set is empty."""
    if new_cells.size == 0:
        return 0.0
    inter = np.intersect1d(new_cells, existing_cells, assume_unique=False)
    return float(inter.size) / float(new_cells.size)


class KeyframeGate:
    def __init__(self, config: KeyframeConfig):
        self.config = config
        self.target_categories: set[str] = set()
        self.coverage_batch: list[Keyframe] = []
        self.task_batch: list[Keyframe] = []
        self.admitted = {KIND_COVERAGE: 0, KIND_TASK: 0}
        self.drained = {KIND_COVERAGE: 0, KIND_TASK: 0}

    def _batch(self, kind: str) -> list[Keyframe]:
        return self.coverage_batch if kind == KIND_COVERAGE else self.task_batch

    def _capacity(self, kind: str) -> int:
        cap = (self.config.coverage_capacity if kind == KIND_COVERAGE
               else self.config.task_capacity)
        return min(cap, self.config.max_keyframes)

    def try_admit_coverage(self, obs: Observation) -> bool:
        """Admit iff the overlap ratio against every batch keyframe is < tau_cov."""
        if obs.visible_cells.size == 0:
            return False
        if len(self.coverage_batch) >= self._capacity(KIND_COVERAGE):
            return False
        for kf in self.coverage_batch:
            if overlap_ratio(obs.visible_cells, kf.visible_cells) >= self.config.tau_cov:
                return False
        self.coverage_batch.append(Keyframe(KIND_COVERAGE, obs.timestamp, obs.pose,
                                            obs.visible_cells))
        self.admitted[KIND_COVERAGE] += 1
        return True

    def try_admit_task(self, obs: Observation) -> bool:
        """Admit iff any detection category matches the target category set."""
        if not self.target_categories:
            return False
        if len(self.task_batch) >= self._capacity(KIND_TASK):
            return False
        matched = [d for d in obs.detections if d.category in self.target_categories]
        if not matched:
            return False
        self.task_batch.append(Keyframe(KIND_TASK, obs.timestamp, obs.pose,
                                        obs.visible_cells, matched))
        self.admitted[KIND_TASK] += 1
        return True

    def drain_if_full(self, kind: str) -> list[Keyframe] | None:
        """Release the batch when it has reached capacity, resetting the gate."""
        batch = self._batch(kind)
        if len(batch) < self._capacity(kind):
            return None
        out = list(batch)
        batch.clear()
        self.drained[kind] += len(out)
        return out
