"""Confidence-weighted semantic value map over the voxel grid.

Each cell holds a semantic value and a confidence. A keyframe score v with
per-cell observation confidence c folds in as a confidence-weighted average:

    value <- (c_prev * value_prev + c * v) / (c_prev + c)
    conf  <- (c_prev^2 + c^2) / (c_prev + c)

Observation confidence decays linearly with distance from the capture pose
and clips at zero. Unfused cells read as (prior, 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .world import Pose, VoxelGrid

DEFAULT_PRIOR = 0.5


def observation_confidence(distance, d_max: float):
    """Linear distance decay max(0, 1 - d / d_max). Accepts scalars or arrays."""
    return np.maximum(0.0, 1.0 - np.asarray(distance, dtype=np.float64) / d_max)


def fuse_scalar(value_prev: float, conf_prev: float, value_new: float,
                conf_new: float) -> tuple[float, float]:
    """Single-cell fusion rule; exposed for tests and offline replays."""
    denom = conf_prev + conf_new
    if denom <= 0.0:
        return value_prev, conf_prev
    value = (conf_prev * value_prev + conf_new * value_new) / denom
    conf = (conf_prev * conf_prev + conf_new * conf_new) / denom
    return value, conf


@dataclass(frozen=True)
class ValueSnapshot:
    """Immutable copy of the map state taken at a revision boundary."""

    sem: np.ndarray
    conf: np.ndarray
    revision: int
    prior: float

    def value_at_flat(self, flat) -> np.ndarray:
        return self.sem.reshape(-1)[flat]


class ValueMap:
    def __init__(self, grid: VoxelGrid, prior: float = DEFAULT_PRIOR, d_max: float = 30.0):
        self.grid = grid
        self.prior = float(prior)
        self.d_max = float(d_max)
        self.sem = np.full(grid.dims, self.prior, dtype=np.float64)
        self.conf = np.zeros(grid.dims, dtype=np.float64)
        self.revision = 0

    def value_at(self, idx) -> tuple[float, float]:
        x, y, z = idx
        return float(self.sem[x, y, z]), float(self.conf[x, y, z])

    def fuse(self, cell_flats: np.ndarray, capture_pose: Pose, value: float) -> int:
        """Fuse one scored keyframe over its visible cells; returns cells touched."""
        if cell_flats.size == 0:
            self.revision += 1
            return 0
        centers = self.grid.cell_centers()[cell_flats]
        d = np.linalg.norm(centers - capture_pose.position, axis=1)
        c_new = observation_confidence(d, self.d_max)
        mask = c_new > 0.0
        flats = cell_flats[mask]
        c_new = c_new[mask]
        sem = self.sem.reshape(-1)
        conf = self.conf.reshape(-1)
        c_prev = conf[flats]
        v_prev = sem[flats]
        denom = c_prev + c_new
        sem[flats] = (c_prev * v_prev + c_new * value) / denom
        conf[flats] = (c_prev * c_prev + c_new * c_new) / denom
        self.revision += 1
        return int(flats.size)

    def snapshot(self) -> ValueSnapshot:
        return ValueSnapshot(self.sem.copy(), self.conf.copy(), self.revision, self.prior)
