"""Sensing, occupancy map updates, and the noisy object detector."""

from __future__ import annotations

import math

import numpy as np
import pytest

from aeroseek.perception import (
    OCC_FREE,
    OCC_OCCUPIED,
    OCC_UNKNOWN,
    AgentMap,
    DetectorNoise,
    Observation,
    SensorConfig,
    detect_objects,
    integrate_lidar,
    load_observation_log,
    save_observation_log,
    sense,
    visible_set,
)
from aeroseek.world import (
    Pose,
    Scenario,
    SceneObject,
    VoxelGrid,
    cast_ray,
    wrap_angle,
)


def _open_grid(dims=(12, 12, 6)) -> VoxelGrid:
    return VoxelGrid(dims, 1.0)


def _mini_scenario() -> Scenario:
    grid = VoxelGrid((14, 14, 4), 1.0)
    grid.solid[:, :, 0] = True
    objs = [
        SceneObject(0, "backpack", grid.index_to_center((10, 7, 1)), [(10, 7, 1)], True),
        SceneObject(1, "crate", grid.index_to_center((3, 11, 1)), [(3, 11, 1)], False),
    ]
    for o in objs:
        for f in o.footprint:
            grid.solid[f] = True
            grid.object_id[f] = o.object_id
    return Scenario(name="mini", grid=grid, objects=objs,
                    instruction="find the backpack", start_pose=Pose(1.5, 1.5, 2.5))


def _visible_oracle(grid, pose, sensor) -> set[int]:
    """Scalar re-derivation of camera visibility, one cast_ray per cell."""
    out = set()
    p = pose.position
    for f in range(grid.n_cells):
        idx = grid.unflat(f)
        c = grid.index_to_center(idx)
        rel = c - p
        d = float(np.linalg.norm(rel))
        if d <= 1e-9 or d > sensor.detect_range:
            continue
        az = math.atan2(rel[1], rel[0])
        elev = math.atan2(rel[2], math.hypot(rel[0], rel[1]))
        if abs(elev) > sensor.fov_v / 2.0 + 1e-12:
            continue
        in_h = any(abs(wrap_angle(az - (pose.yaw + cam))) <= sensor.fov_h / 2.0 + 1e-12
                   for cam in sensor.camera_yaws)
        if not in_h:
            continue
        hit = cast_ray(grid, p, c)
        if grid.solid[idx]:
            if hit == idx:
                out.add(f)
        elif hit is None:
            out.add(f)
    return out


# -- sense ------------------------------------------------------------------------


def test_sense_matches_scalar_oracle():
    grid = _open_grid()
    rng = np.random.default_rng(3)
    grid.solid[rng.random(grid.dims) < 0.1] = True
    pose = Pose(5.3, 6.1, 2.4, 0.7)
    if grid.solid[grid.world_to_index(pose.position)]:
        grid.solid[grid.world_to_index(pose.position)] = False
    sensor = SensorConfig(lidar_range=6.0, detect_range=9.0)
    got = set(int(v) for v in sense(grid, pose, sensor).camera_visible)
    assert got == _visible_oracle(grid, pose, sensor)


def test_sense_occlusion_and_surface():
    grid = _open_grid()
    grid.solid[6, :, :] = True  # wall across the grid
    pose = Pose(2.5, 5.5, 2.5, 0.0)
    sensor = SensorConfig(lidar_range=20.0, detect_range=20.0)
    res = sense(grid, pose, sensor)
    vis = set(int(v) for v in res.camera_visible)
    # the wall face straight ahead is visible as a surface
    assert grid.flat((6, 5, 2)) in vis
    # cells behind the wall are occluded
    assert grid.flat((8, 5, 2)) not in vis
    assert grid.flat((11, 5, 2)) not in vis
    # occupied lidar returns are exactly the solid visible cells in range
    occ = set(int(v) for v in res.lidar_occupied)
    assert grid.flat((6, 5, 2)) in occ
    assert all(grid.solid.reshape(-1)[f] for f in occ)
    assert not any(grid.solid.reshape(-1)[f] for f in res.lidar_free)


def test_sense_rear_blind_spot_covered_by_lidar():
    # three cameras cover 270 degrees; the rear cone is lidar-only
    grid = _open_grid()
    pose = Pose(8.5, 5.5, 2.5, 0.0)
    sensor = SensorConfig(lidar_range=8.0, detect_range=8.0)
    res = sense(grid, pose, sensor)
    behind = grid.flat((4, 5, 2))  # azimuth pi, elevation 0
    assert behind not in res.camera_visible
    assert behind in res.lidar_free
    ahead = grid.flat((11, 5, 2))
    assert ahead in res.camera_visible


def test_sense_vertical_fov_limit():
    grid = _open_grid()
    pose = Pose(5.5, 5.5, 0.5, 0.0)
    sensor = SensorConfig(lidar_range=5.0, detect_range=5.0)
    res = sense(grid, pose, sensor)
    overhead = grid.flat((5, 5, 3))  # elevation ~90 deg, outside fov_v
    assert overhead not in res.camera_visible
    assert overhead in res.lidar_free


def test_sense_own_cell_and_sorted_outputs():
    grid = _open_grid()
    pose = Pose(3.5, 3.5, 2.5, 1.1)
    sensor = SensorConfig()
    res = sense(grid, pose, sensor)
    own = grid.flat(grid.world_to_index(pose.position))
    assert own in res.lidar_free
    for arr in (res.camera_visible, res.lidar_free, res.lidar_occupied):
        assert np.array_equal(arr, np.unique(arr))
    # lidar returns stay within lidar range
    centers = grid.cell_centers()
    for f in np.concatenate([res.lidar_free, res.lidar_occupied]):
        assert np.linalg.norm(centers[int(f)] - pose.position) <= sensor.lidar_range + 1e-9
    assert np.array_equal(visible_set(grid, pose, sensor), res.camera_visible)


# -- agent map ----------------------------------------------------------------------


def test_agent_map_apply_semantics():
    amap = AgentMap((4, 4, 2))
    empty = np.empty(0, dtype=np.int64)
    assert amap.apply(empty, empty).size == 0
    assert amap.revision == 0

    changed = amap.apply(np.array([3, 1, 5]), np.array([7]))
    assert np.array_equal(changed, [1, 3, 5, 7])
    assert amap.revision == 1
    assert amap.flat_state[1] == OCC_FREE
    assert amap.flat_state[7] == OCC_OCCUPIED
    assert amap.flat_state[0] == OCC_UNKNOWN

    # idempotent: same evidence changes nothing
    again = amap.apply(np.array([3, 1, 5]), np.array([7]))
    assert again.size == 0
    assert amap.revision == 1

    # free -> occupied transition is a change
    flip = amap.apply(empty, np.array([3]))
    assert np.array_equal(flip, [3])
    assert amap.flat_state[3] == OCC_OCCUPIED
    assert amap.revision == 2


def test_integrate_lidar_known_fraction_monotone():
    grid = _open_grid()
    grid.solid[7, 7, :] = True
    amap = AgentMap(grid.dims)
    sensor = SensorConfig(lidar_range=5.0)
    prev = 0.0
    for x in (2.5, 4.5, 6.5, 8.5):
        integrate_lidar(amap, grid, Pose(x, 3.5, 2.5), sensor)
        frac = amap.known_fraction()
        assert frac >= prev
        prev = frac
    assert prev > 0.0
    # the map never contradicts ground truth
    flat_solid = grid.solid.reshape(-1)
    state = amap.flat_state
    assert not np.any((state == OCC_FREE) & flat_solid)
    assert not np.any((state == OCC_OCCUPIED) & ~flat_solid)


# -- detector -------------------------------------------------------------------------


def _all_cells(grid) -> np.ndarray:
    return np.arange(grid.n_cells, dtype=np.int64)


def test_detect_noiseless_confidence_exact():
    sc = _mini_scenario()
    sensor = SensorConfig(detect_range=30.0)
    pose = Pose(1.5, 1.5, 2.5)
    rng = np.random.default_rng(0)
    dets = detect_objects(sc, pose, sensor, DetectorNoise(), rng, _all_cells(sc.grid))
    assert [d.source_object_id for d in dets] == [0, 1]
    for det, obj in zip(dets, sc.objects):
        d = float(np.linalg.norm(obj.position - pose.position))
        assert det.confidence == pytest.approx(1.0 - d / sensor.detect_range, abs=1e-12)
        assert det.category == obj.category
        assert np.allclose(det.position, obj.position)


def test_detect_requires_visible_footprint_and_range():
    sc = _mini_scenario()
    pose = Pose(1.5, 1.5, 2.5)
    rng = np.random.default_rng(0)
    # footprint not in the visible set: no detection
    vis = np.array([sc.grid.flat((3, 11, 1))], dtype=np.int64)
    dets = detect_objects(sc, pose, SensorConfig(), DetectorNoise(), rng, vis)
    assert [d.source_object_id for d in dets] == [1]
    # object centers beyond detect_range are dropped even if visible
    near = SensorConfig(detect_range=5.0)
    dets = detect_objects(sc, pose, near, DetectorNoise(), rng, _all_cells(sc.grid))
    assert dets == []


def test_detect_miss_and_mislabel():
    sc = _mini_scenario()
    pose = Pose(1.5, 1.5, 2.5)
    vis = _all_cells(sc.grid)
    dets = detect_objects(sc, pose, SensorConfig(), DetectorNoise(miss_prob=1.0),
                          np.random.default_rng(1), vis)
    assert dets == []
    dets = detect_objects(sc, pose, SensorConfig(), DetectorNoise(mislabel_prob=1.0),
                          np.random.default_rng(1), vis)
    assert len(dets) == 2
    for det, obj in zip(dets, sc.objects):
        assert det.category != obj.category
        assert det.source_object_id == obj.object_id


def test_detect_jitter_clipped_and_deterministic():
    sc = _mini_scenario()
    pose = Pose(1.5, 1.5, 2.5)
    vis = _all_cells(sc.grid)
    noise = DetectorNoise(confidence_jitter=0.5)
    a = detect_objects(sc, pose, SensorConfig(), noise, np.random.default_rng(9), vis)
    b = detect_objects(sc, pose, SensorConfig(), noise, np.random.default_rng(9), vis)
    assert [d.to_dict() for d in a] == [d.to_dict() for d in b]
    for det in a:
        assert 0.0 <= det.confidence <= 1.0


def test_detect_hallucinations():
    sc = _mini_scenario()
    pose = Pose(1.5, 1.5, 2.5)
    vis = _all_cells(sc.grid)
    noise = DetectorNoise(hallucination_rate=4.0)
    dets = detect_objects(sc, pose, SensorConfig(), noise, np.random.default_rng(5), vis)
    ghosts = [d for d in dets if d.source_object_id is None]
    assert ghosts  # rate 4.0 essentially always yields at least one
    flat_solid = sc.grid.solid.reshape(-1)
    for g in ghosts:
        cell = sc.grid.flat(sc.grid.world_to_index(g.position))
        assert not flat_solid[cell]
        assert 0.2 <= g.confidence <= 0.9


def test_benchmark_noise_profile():
    n = DetectorNoise.benchmark()
    assert (n.miss_prob, n.mislabel_prob, n.hallucination_rate, n.confidence_jitter) == \
        (0.05, 0.02, 0.02, 0.03)


# -- observation log -------------------------------------------------------------------


def test_observation_log_roundtrip(tmp_path):
    sc = _mini_scenario()
    pose = Pose(1.5, 1.5, 2.5, 0.3)
    dets = detect_objects(sc, pose, SensorConfig(), DetectorNoise(),
                          np.random.default_rng(0), _all_cells(sc.grid))
    obs = [
        Observation(0.0, pose, np.array([1, 2, 3]), dets),
        Observation(0.5, pose.with_yaw(1.0), np.array([4]), []),
    ]
    path = tmp_path / "log.ndjson"
    save_observation_log(path, obs)
    back = load_observation_log(path)
    assert len(back) == 2
    assert back[0]["timestamp"] == 0.0
    assert back[0]["pose"] == pose
    assert [d.to_dict() for d in back[0]["detections"]] == [d.to_dict() for d in dets]
    assert back[1]["pose"].yaw == pytest.approx(1.0)
    assert back[1]["detections"] == []
