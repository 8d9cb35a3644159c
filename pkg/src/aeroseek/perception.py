"""Onboard sensing against the ground-truth grid.

Visibility is cell-center sampled: a cell is seen iff its center lies in a
camera frustum (or lidar range), and the segment from the sensor pose to the
center reaches it without entering another solid cell first. Solid cells are
visible as surfaces (the ray's first hit is the cell itself). Occupancy
sensing is noiseless; object detection carries a configurable noise model.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .world import (
    CATEGORIES,
    Pose,
    Scenario,
    SceneObject,
    VoxelGrid,
    ray_first_hit_batch,
    wrap_angle,
)

OCC_UNKNOWN = 0
OCC_FREE = 1
OCC_OCCUPIED = 2


@dataclass
class SensorConfig:
    fov_h: float = math.radians(90.0)
    fov_v: float = math.radians(60.0)
    camera_yaws: tuple[float, ...] = (0.0, math.pi / 2.0, -math.pi / 2.0)
    lidar_range: float = 10.0
    detect_range: float = 30.0


@dataclass
class DetectorNoise:
    miss_prob: float = 0.0
    mislabel_prob: float = 0.0
    hallucination_rate: float = 0.0
    confidence_jitter: float = 0.0

    @staticmethod
    def benchmark() -> "DetectorNoise":
        """Noise levels used by the shipped benchmark runs."""
        return DetectorNoise(miss_prob=0.05, mislabel_prob=0.02,
                             hallucination_rate=0.02, confidence_jitter=0.03)


@dataclass
class Detection:
    category: str
    position: np.ndarray
    confidence: float
    source_object_id: int | None

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "position": [float(v) for v in self.position],
            "confidence": float(self.confidence),
            "source_object_id": self.source_object_id,
        }

    @staticmethod
    def from_dict(d: dict) -> "Detection":
        return Detection(
            category=str(d["category"]),
            position=np.asarray(d["position"], dtype=np.float64),
            confidence=float(d["confidence"]),
            source_object_id=d.get("source_object_id"),
        )


@dataclass
class Observation:
    timestamp: float
    pose: Pose
    visible_cells: np.ndarray  # sorted flat indices, camera-visible
    detections: list[Detection] = field(default_factory=list)


class AgentMap:
    """The drone's occupancy knowledge: unknown, known-free, or known-occupied."""

    def __init__(self, dims: tuple[int, int, int]):
        self.dims = dims
        self.state = np.full(dims, OCC_UNKNOWN, dtype=np.int8)
        self.revision = 0

    @property
    def flat_state(self) -> np.ndarray:
        return self.state.reshape(-1)

    def known_fraction(self) -> float:
        return float((self.state != OCC_UNKNOWN).mean())

    def apply(self, free_flats: np.ndarray, occupied_flats: np.ndarray) -> np.ndarray:
        """Mark cells free/occupied; returns flat indices whose state changed."""
        flat = self.flat_state
        changed = []
        if free_flats.size:
            delta = free_flats[flat[free_flats] != OCC_FREE]
            flat[delta] = OCC_FREE
            changed.append(delta)
        if occupied_flats.size:
            delta = occupied_flats[flat[occupied_flats] != OCC_OCCUPIED]
            flat[delta] = OCC_OCCUPIED
            changed.append(delta)
        out = np.concatenate(changed) if changed else np.empty(0, dtype=np.int64)
        if out.size:
            self.revision += 1
        return np.sort(out)


@dataclass
class SenseResult:
    camera_visible: np.ndarray   # sorted flat indices
    lidar_free: np.ndarray       # flat indices observed free within lidar range
    lidar_occupied: np.ndarray   # flat indices observed solid within lidar range


def _camera_frustum_mask(rel: np.ndarray, dist: np.ndarray, pose_yaw: float,
                         sensor: SensorConfig) -> np.ndarray:
    """Boolean mask over candidate cells inside any camera frustum."""
    az = np.arctan2(rel[:, 1], rel[:, 0])
    horiz = np.hypot(rel[:, 0], rel[:, 1])
    elev = np.arctan2(rel[:, 2], horiz)
    mask = np.zeros(rel.shape[0], dtype=bool)
    for cam in sensor.camera_yaws:
        yaw = pose_yaw + cam
        d = np.abs(np.angle(np.exp(1j * (az - yaw))))
        mask |= d <= sensor.fov_h / 2.0 + 1e-12
    mask &= np.abs(elev) <= sensor.fov_v / 2.0 + 1e-12
    mask &= dist > 1e-9
    return mask


def sense(grid: VoxelGrid, pose: Pose, sensor: SensorConfig) -> SenseResult:
    """One sensing pass: camera-visible cells plus lidar free/occupied cells."""
    centers = grid.cell_centers()
    p = pose.position
    rel = centers - p
    dist = np.linalg.norm(rel, axis=1)

    lidar_cand = dist <= sensor.lidar_range
    cam_cand = (dist <= sensor.detect_range) & _camera_frustum_mask(rel, dist, pose.yaw, sensor)
    union = np.nonzero(lidar_cand | cam_cand)[0]
    if union.size == 0:
        empty = np.empty(0, dtype=np.int64)
        return SenseResult(empty, empty, empty)

    starts = np.broadcast_to(p, (union.size, 3))
    hits = ray_first_hit_batch(grid.solid, grid.resolution, grid.origin,
                               starts, centers[union])
    tgt = np.stack([u.astype(np.int32) for u in np.unravel_index(union, grid.dims)], axis=1)
    solid_t = grid.solid.reshape(-1)[union]
    no_hit = hits[:, 0] < 0
    hit_is_self = (hits == tgt).all(axis=1)
    visible = np.where(solid_t, hit_is_self, no_hit)

    vis_flats = union[visible]
    lidar_vis = vis_flats[lidar_cand[vis_flats]]
    own = grid.flat(grid.world_to_index(p))
    lidar_free = lidar_vis[~grid.solid.reshape(-1)[lidar_vis]]
    if not grid.solid.reshape(-1)[own] and own not in lidar_free:
        lidar_free = np.sort(np.append(lidar_free, own))
    lidar_occ = lidar_vis[grid.solid.reshape(-1)[lidar_vis]]
    cam_vis = vis_flats[cam_cand[vis_flats]]
    return SenseResult(np.sort(cam_vis), np.sort(lidar_free), np.sort(lidar_occ))


def visible_set(grid: VoxelGrid, pose: Pose, sensor: SensorConfig) -> np.ndarray:
    """Sorted flat indices of cells visible to the camera rig from a pose."""
    return sense(grid, pose, sensor).camera_visible


def integrate_lidar(agent_map: AgentMap, grid: VoxelGrid, pose: Pose,
                    sensor: SensorConfig, sensed: SenseResult | None = None) -> np.ndarray:
    """Fold one lidar sweep into the occupancy map; returns changed flat indices."""
    if sensed is None:
        sensed = sense(grid, pose, sensor)
    return agent_map.apply(sensed.lidar_free, sensed.lidar_occupied)


def detect_objects(scenario: Scenario, pose: Pose, sensor: SensorConfig,
                   noise: DetectorNoise, rng: np.random.Generator,
                   visible_cells: np.ndarray) -> list[Detection]:
    """Detections for objects with a camera-visible footprint voxel.

    Confidence is 1 - distance / detect_range plus optional jitter. The noise
    draws are consumed in a fixed order (objects by id, then hallucinations),
    so identical seeds replay identical streams.
    """
    grid = scenario.grid
    p = pose.position
    out: list[Detection] = []
    vis = visible_cells
    for obj in sorted(scenario.objects, key=lambda o: o.object_id):
        foot = np.array([grid.flat(f) for f in obj.footprint], dtype=np.int64)
        if not np.isin(foot, vis, assume_unique=False).any():
            continue
        d = float(np.linalg.norm(obj.position - p))
        if d > sensor.detect_range:
            continue
        if rng.random() < noise.miss_prob:
            continue
        category = obj.category
        if rng.random() < noise.mislabel_prob:
            others = [c for c in CATEGORIES if c != obj.category]
            category = others[int(rng.integers(len(others)))]
        # scale 0 adds exactly 0.0 while consuming the same draws, so noisy and
        # noiseless runs share one code path
        conf = 1.0 - d / sensor.detect_range + float(rng.normal(0.0, noise.confidence_jitter))
        out.append(Detection(category, obj.position.copy(),
                             float(np.clip(conf, 0.0, 1.0)), obj.object_id))
    n_hall = int(rng.poisson(noise.hallucination_rate)) if noise.hallucination_rate > 0 else 0
    if n_hall:
        free_vis = vis[~grid.solid.reshape(-1)[vis]]
        for _ in range(n_hall):
            if free_vis.size == 0:
                break
            cell = int(free_vis[int(rng.integers(free_vis.size))])
            category = CATEGORIES[int(rng.integers(len(CATEGORIES)))]
            conf = float(rng.uniform(0.2, 0.9))
            out.append(Detection(category, grid.index_to_center(grid.unflat(cell)),
                                 conf, None))
    return out


# -- observation log -------------------------------------------------------------


def save_observation_log(path, observations: list[Observation]) -> None:
    """Write (timestamp, pose, detections) records as newline-delimited JSON."""
    with open(path, "w") as fh:
        for obs in observations:
            rec = {
                "timestamp": obs.timestamp,
                "pose": obs.pose.to_list(),
                "detections": [d.to_dict() for d in obs.detections],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_observation_log(path) -> list[dict]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            rec["pose"] = Pose.from_list(rec["pose"])
            rec["detections"] = [Detection.from_dict(d) for d in rec["detections"]]
            out.append(rec)
    return out
