"""Voxel grid, ray casts, collision checks, scenario schema and generators."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aeroseek.world import (
    CATEGORIES,
    RELATED_CATEGORIES,
    SCHEMA_VERSION,
    TEMPLATES,
    Pose,
    Scenario,
    ScenarioError,
    VoxelGrid,
    _decode_rle,
    _encode_rle,
    cast_ray,
    collision_free,
    generate_scenario,
    load_scenario,
    ray_first_hit_batch,
    save_scenario,
    scenario_from_dict,
    scenario_to_dict,
    wrap_angle,
    yaw_distance,
)


def _empty_grid(dims=(8, 8, 8), resolution=1.0, origin=(0.0, 0.0, 0.0)) -> VoxelGrid:
    return VoxelGrid(dims, resolution, origin)


def _slab_first_hit(grid, start, end):
    """Independent ray oracle: earliest solid box the segment penetrates.

    Checks every solid cell with a slab test instead of stepping the grid.
    Grazing contacts (zero penetration) are ignored; callers use endpoints in
    general position so those never decide a comparison.
    """
    s = np.asarray(start, dtype=np.float64)
    e = np.asarray(end, dtype=np.float64)
    if not grid.point_in_bounds(s):
        return None
    start_cell = grid.world_to_index(s)
    if grid.solid[start_cell]:
        return start_cell
    d = e - s
    best_t = None
    best_cell = None
    for idx in np.argwhere(grid.solid):
        lo = grid.origin + idx * grid.resolution
        hi = lo + grid.resolution
        t0, t1 = 0.0, 1.0
        ok = True
        for ax in range(3):
            if d[ax] == 0.0:
                if not (lo[ax] <= s[ax] <= hi[ax]):
                    ok = False
                    break
                continue
            ta = (lo[ax] - s[ax]) / d[ax]
            tb = (hi[ax] - s[ax]) / d[ax]
            if ta > tb:
                ta, tb = tb, ta
            t0 = max(t0, ta)
            t1 = min(t1, tb)
            if t0 >= t1:
                ok = False
                break
        if ok and (best_t is None or t0 < best_t):
            best_t = t0
            best_cell = (int(idx[0]), int(idx[1]), int(idx[2]))
    return best_cell


# -- angles and poses -----------------------------------------------------------


@settings(max_examples=300, deadline=None)
@given(st.floats(min_value=-1e6, max_value=1e6))
def test_wrap_angle_range(a):
    w = wrap_angle(a)
    assert -math.pi <= w < math.pi


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=-50.0, max_value=50.0))
def test_wrap_angle_periodic(a):
    assert wrap_angle(a + 2.0 * math.pi) == pytest.approx(wrap_angle(a), abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=-20.0, max_value=20.0), st.floats(min_value=-20.0, max_value=20.0))
def test_yaw_distance_symmetric_bounded(a, b):
    d = yaw_distance(a, b)
    assert 0.0 <= d <= math.pi + 1e-12
    assert d == pytest.approx(yaw_distance(b, a), abs=1e-9)


def test_yaw_distance_values():
    assert yaw_distance(0.0, 0.0) == 0.0
    assert yaw_distance(0.0, math.pi / 2) == pytest.approx(math.pi / 2)
    # crossing the wrap seam: 170 deg to -170 deg is 20 deg apart
    assert yaw_distance(math.radians(170), math.radians(-170)) == pytest.approx(
        math.radians(20), abs=1e-9)


def test_pose_roundtrip_and_with_yaw():
    p = Pose.from_list([1.0, 2.0, 3.0, 7.0])
    assert p.yaw == pytest.approx(wrap_angle(7.0))
    assert Pose.from_list(p.to_list()) == p
    q = p.with_yaw(4.0)
    assert q.yaw == pytest.approx(wrap_angle(4.0))
    assert (q.x, q.y, q.z) == (p.x, p.y, p.z)
    assert np.allclose(p.position, [1.0, 2.0, 3.0])
    with pytest.raises(ScenarioError):
        Pose.from_list([1.0, 2.0, 3.0])


# -- grid indexing ----------------------------------------------------------------


def test_grid_constructor_validation():
    with pytest.raises(ScenarioError):
        VoxelGrid((0, 4, 4), 1.0)
    with pytest.raises(ScenarioError):
        VoxelGrid((4, 4), 1.0)
    with pytest.raises(ScenarioError):
        VoxelGrid((4, 4, 4), 0.0)


def test_world_to_index_half_open():
    g = _empty_grid((4, 4, 4), 0.5, origin=(1.0, 0.0, 0.0))
    # boundary points belong to the upper cell
    assert g.world_to_index((1.0, 0.0, 0.0)) == (0, 0, 0)
    assert g.world_to_index((1.5, 0.0, 0.0)) == (1, 0, 0)
    assert g.world_to_index((1.4999, 0.2499, 0.75)) == (0, 0, 1)
    assert g.point_in_bounds((1.0, 0.0, 0.0))
    assert not g.point_in_bounds((3.0, 0.0, 0.0))  # 1.0 + 4*0.5 is exclusive
    assert not g.point_in_bounds((0.999, 0.0, 0.0))


def test_index_center_flat_roundtrip():
    g = _empty_grid((3, 4, 5), 0.25, origin=(-1.0, 2.0, 0.5))
    centers = g.cell_centers()
    assert centers.shape == (g.n_cells, 3)
    for x in range(3):
        for y in range(4):
            for z in range(5):
                f = g.flat((x, y, z))
                assert g.unflat(f) == (x, y, z)
                c = g.index_to_center((x, y, z))
                assert g.world_to_index(c) == (x, y, z)
                assert np.allclose(centers[f], c)


def test_cell_lookup_tags():
    g = _empty_grid((4, 4, 2))
    g.paint_region_column(1, 2, "road")
    g.solid[1, 2, 0] = True
    g.object_id[1, 2, 0] = 7
    c = g.cell((1, 2, 0))
    assert c.solid and c.region_tag == "road" and c.object_id == 7
    c2 = g.cell((0, 0, 0))
    assert not c2.solid and c2.region_tag is None and c2.object_id is None
    with pytest.raises(IndexError):
        g.cell((4, 0, 0))
    # region codes are stable per tag
    assert g.region_code("road") == g.region_code("road")
    assert g.region_code("field") != g.region_code("road")


# -- ray casting ------------------------------------------------------------------


def test_cast_ray_fixtures():
    g = _empty_grid((12, 6, 6))
    assert cast_ray(g, (0.5, 2.5, 2.5), (11.5, 2.5, 2.5)) is None
    g.solid[5, 2, 2] = True
    g.solid[8, 2, 2] = True
    # nearest wall wins
    assert cast_ray(g, (0.5, 2.5, 2.5), (11.5, 2.5, 2.5)) == (5, 2, 2)
    # segment stops short of the wall
    assert cast_ray(g, (0.5, 2.5, 2.5), (4.3, 2.5, 2.5)) is None
    # start inside a solid voxel reports that voxel
    assert cast_ray(g, (5.5, 2.5, 2.5), (0.5, 2.5, 2.5)) == (5, 2, 2)
    # start outside the grid never hits
    assert cast_ray(g, (-3.0, 2.5, 2.5), (11.0, 2.5, 2.5)) is None


def test_cast_ray_diagonal_tie_steps_lowest_axis_first():
    # exact 45 degree ray; boundary ties step x before y, so the traversal
    # visits (1,0) then (1,1) and never (0,1)
    g = _empty_grid((4, 4, 1))
    g.solid[0, 1, 0] = True
    assert cast_ray(g, (0.5, 0.5, 0.5), (2.5, 2.5, 0.5)) is None
    g.solid[1, 0, 0] = True
    assert cast_ray(g, (0.5, 0.5, 0.5), (2.5, 2.5, 0.5)) == (1, 0, 0)


def test_cast_ray_matches_slab_oracle_random():
    rng = np.random.default_rng(2024)
    for trial in range(10):
        g = _empty_grid((10, 9, 6), resolution=0.8, origin=(-2.0, 1.0, 0.0))
        g.solid[rng.random(g.dims) < 0.12] = True
        lo = g.origin
        hi = g.origin + np.array(g.dims) * g.resolution
        for _ in range(60):
            start = lo + rng.random(3) * (hi - lo)
            end = lo + (rng.random(3) * 1.6 - 0.3) * (hi - lo)
            got = cast_ray(g, start, end)
            want = _slab_first_hit(g, start, end)
            assert got == want, (trial, start.tolist(), end.tolist())


def test_ray_batch_matches_scalar():
    rng = np.random.default_rng(7)
    g = _empty_grid((8, 8, 4))
    g.solid[rng.random(g.dims) < 0.15] = True
    starts = rng.random((40, 3)) * [8, 8, 4]
    ends = rng.random((40, 3)) * [8, 8, 4]
    hits = ray_first_hit_batch(g.solid, g.resolution, g.origin, starts, ends)
    for i in range(starts.shape[0]):
        scalar = cast_ray(g, starts[i], ends[i])
        batch = None if hits[i, 0] < 0 else tuple(int(v) for v in hits[i])
        assert scalar == batch


# -- collision --------------------------------------------------------------------


def test_collision_free_distances():
    g = _empty_grid((8, 8, 8))
    g.solid[4, 4, 4] = True
    # face distance 1.0: exactly at inflation is free (strict-less blocks)
    assert collision_free(g, (3.0, 4.5, 4.5), 1.0)
    assert not collision_free(g, (3.0, 4.5, 4.5), 1.0 + 1e-9)
    assert collision_free(g, (3.0, 4.5, 4.5), 0.5)
    # corner distance sqrt(0.5)
    corner = math.sqrt(0.5)
    assert collision_free(g, (3.5, 3.5, 4.5), corner - 1e-9)
    assert not collision_free(g, (3.5, 3.5, 4.5), corner + 1e-9)
    # inside the solid, or outside the grid, is never free
    assert not collision_free(g, (4.5, 4.5, 4.5), 0.0)
    assert not collision_free(g, (-0.1, 4.0, 4.0), 0.25)
    assert not collision_free(g, (8.0, 4.0, 4.0), 0.25)


def test_collision_free_empty_and_scaled():
    g = _empty_grid((6, 6, 6))
    assert collision_free(g, (3.0, 3.0, 3.0), 100.0)
    h = _empty_grid((8, 8, 8), resolution=0.5)
    h.solid[4, 4, 4] = True  # box [2.0, 2.5)^3 in world units
    assert collision_free(h, (1.5, 2.25, 2.25), 0.5)
    assert not collision_free(h, (1.5, 2.25, 2.25), 0.51)


# -- run-length coding --------------------------------------------------------------


def test_rle_roundtrip_random_masks():
    rng = np.random.default_rng(11)
    for _ in range(20):
        dims = tuple(int(v) for v in rng.integers(1, 9, size=3))
        mask = rng.random(dims) < rng.uniform(0.0, 0.6)
        runs = _encode_rle(mask)
        back = _decode_rle(runs, dims, "solids")
        assert np.array_equal(back, mask)
    assert _encode_rle(np.zeros((3, 3, 3), dtype=bool)) == []


def test_rle_decode_errors():
    with pytest.raises(ScenarioError, match="run must be"):
        _decode_rle([[0, 0, 0]], (4, 4, 4), "solids")
    with pytest.raises(ScenarioError, match="count must be positive"):
        _decode_rle([[0, 0, 0, 0]], (4, 4, 4), "solids")
    with pytest.raises(ScenarioError, match="exits grid bounds"):
        _decode_rle([[2, 0, 0, 3]], (4, 4, 4), "solids")
    with pytest.raises(ScenarioError, match="exits grid bounds"):
        _decode_rle([[0, 4, 0, 1]], (4, 4, 4), "solids")


# -- scenario schema ----------------------------------------------------------------


def _valid_doc() -> dict:
    return scenario_to_dict(generate_scenario("open_field", 3))


def test_scenario_roundtrip_exact():
    doc = _valid_doc()
    sc = scenario_from_dict(json.loads(json.dumps(doc)))
    assert scenario_to_dict(sc) == doc


def test_scenario_save_load(tmp_path):
    sc = generate_scenario("waterfront", 0)
    path = tmp_path / "wf.json"
    save_scenario(sc, path)
    again = load_scenario(path)
    assert scenario_to_dict(again) == scenario_to_dict(sc)


@pytest.mark.parametrize("mutate,msg", [
    (lambda d: d.update(bogus=1), "unknown scenario field"),
    (lambda d: d.update(schema=99), "unsupported schema"),
    (lambda d: d.pop("instruction"), "missing required field"),
    (lambda d: d["objects"][0].pop("category"), "missing field"),
    (lambda d: d["objects"][1].update(id=d["objects"][0]["id"]), "duplicate object id"),
    (lambda d: d["objects"][0].update(footprint=[]), "footprint must be non-empty"),
    (lambda d: d["objects"][0].update(footprint=[[999, 0, 0]]), "out of bounds"),
    (lambda d: d["objects"][0].update(position=[1e6, 0.0, 0.0]), "position outside grid"),
    (lambda d: d.update(start_pose=[1e6, 0.0, 0.0, 0.0]), "start_pose outside grid"),
    (lambda d: d.update(success_radius=0.0), "success_radius"),
    (lambda d: d.update(query_budget=0), "query_budget"),
])
def test_scenario_validation_errors(mutate, msg):
    doc = _valid_doc()
    mutate(doc)
    with pytest.raises(ScenarioError, match=msg):
        scenario_from_dict(doc)


def test_scenario_target_count_enforced():
    doc = _valid_doc()
    for od in doc["objects"]:
        od["is_target"] = False
    with pytest.raises(ScenarioError, match="exactly one target"):
        scenario_from_dict(doc)
    for od in doc["objects"]:
        od["is_target"] = True
    with pytest.raises(ScenarioError, match="exactly one target"):
        scenario_from_dict(doc)


def test_scenario_start_inside_solid_rejected():
    doc = _valid_doc()
    pose = doc["start_pose"]
    doc["solids"].append([int(pose[0]), int(pose[1]), int(pose[2]), 1])
    with pytest.raises(ScenarioError, match="inside a solid voxel"):
        scenario_from_dict(doc)


def test_target_property():
    sc = generate_scenario("forest_corridor", 3)
    tgt = sc.target
    assert tgt.is_target
    assert sum(o.is_target for o in sc.objects) == 1
    # footprint cells are solid and tagged with the object id
    for f in tgt.footprint:
        assert sc.grid.solid[f]
        assert sc.grid.object_id[f] == tgt.object_id
    bare = Scenario(name="x", grid=_empty_grid(), objects=[], instruction="",
                    start_pose=Pose(1.0, 1.0, 1.0))
    with pytest.raises(ScenarioError):
        _ = bare.target


# -- generators ---------------------------------------------------------------------


@pytest.mark.parametrize("template", TEMPLATES)
def test_generate_all_templates(template):
    sc = generate_scenario(template, 3)
    assert sc.template == template
    assert sc.seed == 3
    assert sc.name.startswith(template)
    assert 0.0 < sc.solid_fraction() < 0.5
    assert sc.target.category in CATEGORIES
    assert sc.target.category in RELATED_CATEGORIES
    assert not sc.grid.solid[sc.grid.world_to_index(sc.start_pose.position)]
    assert sc.query_budget >= 1
    assert sc.success_radius > 0


def test_generate_deterministic_and_seed_sensitive():
    a = scenario_to_dict(generate_scenario("urban_blocks", 6))
    b = scenario_to_dict(generate_scenario("urban_blocks", 6))
    c = scenario_to_dict(generate_scenario("urban_blocks", 9))
    assert a == b
    assert a != c


def test_generate_unknown_template():
    with pytest.raises(ScenarioError, match="unknown template"):
        generate_scenario("moon_base", 0)


def test_schema_version_is_one():
    assert SCHEMA_VERSION == 1
    assert _valid_doc()["schema"] == 1
