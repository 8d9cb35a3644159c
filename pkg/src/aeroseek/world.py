"""Simulated voxel world.

Ground-truth occupancy lives in a dense axis-aligned voxel grid. Cells are
half-open boxes: a point belongs to cell (x, y, z) iff
origin + [x, x+1) * resolution contains it on every axis. Scenario files are
JSON (schema version 1) with run-length encoded solids, named region tags,
scene objects, a natural-language instruction, and a start pose.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if len(args) == 1 and callable(args[0]):
            return args[0]
        return wrap


SCHEMA_VERSION = 1

# Object categories known to the detector and the oracle vocabulary.
CATEGORIES = (
    "backpack",
    "trash_bin",
    "bench",
    "car",
    "tent",
    "boat",
    "umbrella",
    "crate",
    "barrel",
    "bicycle",
)

# Categories an oracle treats as plausible stand-ins for each other. Used for
# instruction expansion and for near-miss verification candidates.
RELATED_CATEGORIES = {
    "backpack": ("backpack", "crate", "barrel"),
    "trash_bin": ("trash_bin", "barrel", "crate", "bench"),
    "bench": ("bench", "crate", "bicycle"),
    "car": ("car", "crate"),
    "tent": ("tent", "umbrella", "crate"),
    "boat": ("boat", "crate"),
    "umbrella": ("umbrella", "tent"),
    "crate": ("crate", "barrel", "trash_bin"),
    "barrel": ("barrel", "trash_bin", "crate"),
    "bicycle": ("bicycle", "bench"),
}

TEMPLATES = ("open_field", "urban_blocks", "forest_corridor", "waterfront")


class ScenarioError(ValueError):
    """Raised when a scenario file violates the schema or its invariants."""


def wrap_angle(a: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    return float((a + math.pi) % (2.0 * math.pi) - math.pi)


def yaw_distance(a: float, b: float) -> float:
    """Absolute angular separation in [0, pi]."""
    return abs(wrap_angle(a - b))


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    z: float
    yaw: float = 0.0

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    def with_yaw(self, yaw: float) -> "Pose":
        return replace(self, yaw=wrap_angle(yaw))

    def to_list(self) -> list[float]:
        return [self.x, self.y, self.z, self.yaw]

    @staticmethod
    def from_list(vals) -> "Pose":
        if len(vals) != 4:
            raise ScenarioError("pose must be [x, y, z, yaw]")
        return Pose(float(vals[0]), float(vals[1]), float(vals[2]), wrap_angle(float(vals[3])))


@dataclass(frozen=True)
class GroundTruthCell:
    solid: bool
    region_tag: str | None
    object_id: int | None


@dataclass
class SceneObject:
    object_id: int
    category: str
    position: np.ndarray  # anchor point in world coordinates
    footprint: list[tuple[int, int, int]]  # voxel indices marked solid
    is_target: bool = False

    def to_dict(self) -> dict:
        return {
            "id": self.object_id,
            "category": self.category,
            "position": [float(v) for v in self.position],
            "footprint": [list(map(int, f)) for f in self.footprint],
            "is_target": bool(self.is_target),
        }


class VoxelGrid:
    """Dense ground-truth voxel grid with per-cell solidity, region and object tags."""

    def __init__(self, dims: tuple[int, int, int], resolution: float, origin=(0.0, 0.0, 0.0)):
        if len(dims) != 3 or any(int(d) <= 0 for d in dims):
            raise ScenarioError(f"dims must be three positive integers, got {dims!r}")
        if resolution <= 0:
            raise ScenarioError(f"resolution must be positive, got {resolution!r}")
        self.dims = (int(dims[0]), int(dims[1]), int(dims[2]))
        self.resolution = float(resolution)
        self.origin = np.asarray(origin, dtype=np.float64)
        self.solid = np.zeros(self.dims, dtype=bool)
        self.region = np.full(self.dims, -1, dtype=np.int16)
        self.region_tags: list[str] = []
        self.object_id = np.full(self.dims, -1, dtype=np.int32)
        self._centers: np.ndarray | None = None

    # -- indexing ------------------------------------------------------------

    @property
    def n_cells(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def in_bounds(self, idx) -> bool:
        x, y, z = idx
        nx, ny, nz = self.dims
        return 0 <= x < nx and 0 <= y < ny and 0 <= z < nz

    def point_in_bounds(self, point) -> bool:
        p = (np.asarray(point, dtype=np.float64) - self.origin) / self.resolution
        return bool(np.all(p >= 0.0) and np.all(p < np.array(self.dims)))

    def world_to_index(self, point) -> tuple[int, int, int]:
        p = (np.asarray(point, dtype=np.float64) - self.origin) / self.resolution
        idx = np.floor(p).astype(np.int64)
        return (int(idx[0]), int(idx[1]), int(idx[2]))

    def index_to_center(self, idx) -> np.ndarray:
        return self.origin + (np.asarray(idx, dtype=np.float64) + 0.5) * self.resolution

    def flat(self, idx) -> int:
        x, y, z = idx
        _, ny, nz = self.dims
        return (int(x) * ny + int(y)) * nz + int(z)

    def unflat(self, flat: int) -> tuple[int, int, int]:
        _, ny, nz = self.dims
        z = flat % nz
        rem = flat // nz
        return (rem // ny, rem % ny, z)

    def cell_centers(self) -> np.ndarray:
        """(n_cells, 3) array of world-frame cell centers, flat-index order. Cached."""
        if self._centers is None:
            nx, ny, nz = self.dims
            gx, gy, gz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
            idx = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1).astype(np.float64)
            self._centers = self.origin + (idx + 0.5) * self.resolution
        return self._centers

    def cell(self, idx) -> GroundTruthCell:
        if not self.in_bounds(idx):
            raise IndexError(f"cell index {idx} out of bounds for dims {self.dims}")
        x, y, z = int(idx[0]), int(idx[1]), int(idx[2])
        r = int(self.region[x, y, z])
        o = int(self.object_id[x, y, z])
        return GroundTruthCell(
            solid=bool(self.solid[x, y, z]),
            region_tag=self.region_tags[r] if r >= 0 else None,
            object_id=o if o >= 0 else None,
        )

    # -- mutation used by the generator and loader ----------------------------

    def region_code(self, tag: str) -> int:
        if tag not in self.region_tags:
            self.region_tags.append(tag)
        return self.region_tags.index(tag)

    def paint_region_column(self, x: int, y: int, tag: str) -> None:
        self.region[x, y, :] = self.region_code(tag)


# -- ray casting ---------------------------------------------------------------


def _ray_first_hit_py(solid, starts, ends, out):
    """Amanatides-Woo traversal for a batch of segments, grid coordinates.

    starts/ends are float (n, 3) positions in units of cells relative to the
    grid corner. out is int32 (n, 3); rows are set to the first solid cell a
    segment enters, or (-1, -1, -1) when the segment reaches its endpoint
    without touching a solid cell. Ties on cell-boundary crossings step the
    lowest axis first.
    """
    nx, ny, nz = solid.shape
    n = starts.shape[0]
    for i in range(n):
        sx, sy, sz = starts[i, 0], starts[i, 1], starts[i, 2]
        ex, ey, ez = ends[i, 0], ends[i, 1], ends[i, 2]
        cx, cy, cz = int(math.floor(sx)), int(math.floor(sy)), int(math.floor(sz))
        tx, ty, tz = int(math.floor(ex)), int(math.floor(ey)), int(math.floor(ez))
        out[i, 0] = -1
        out[i, 1] = -1
        out[i, 2] = -1
        if cx < 0 or cx >= nx or cy < 0 or cy >= ny or cz < 0 or cz >= nz:
            continue
        if solid[cx, cy, cz]:
            out[i, 0] = cx
            out[i, 1] = cy
            out[i, 2] = cz
            continue
        dx, dy, dz = ex - sx, ey - sy, ez - sz
        stepx = 1 if dx > 0.0 else (-1 if dx < 0.0 else 0)
        stepy = 1 if dy > 0.0 else (-1 if dy < 0.0 else 0)
        stepz = 1 if dz > 0.0 else (-1 if dz < 0.0 else 0)
        big = 1e30
        if stepx != 0:
            nxt = cx + 1 if stepx > 0 else cx
            tmaxx = (nxt - sx) / dx
            tdx = abs(1.0 / dx)
        else:
            tmaxx, tdx = big, big
        if stepy != 0:
            nxt = cy + 1 if stepy > 0 else cy
            tmaxy = (nxt - sy) / dy
            tdy = abs(1.0 / dy)
        else:
            tmaxy, tdy = big, big
        if stepz != 0:
            nxt = cz + 1 if stepz > 0 else cz
            tmaxz = (nxt - sz) / dz
            tdz = abs(1.0 / dz)
        else:
            tmaxz, tdz = big, big
        while True:
            if cx == tx and cy == ty and cz == tz:
                break
            if tmaxx <= tmaxy and tmaxx <= tmaxz:
                t = tmaxx
                cx += stepx
                tmaxx += tdx
            elif tmaxy <= tmaxz:
                t = tmaxy
                cy += stepy
                tmaxy += tdy
            else:
                t = tmaxz
                cz += stepz
                tmaxz += tdz
            if t > 1.0:
                break
            if cx < 0 or cx >= nx or cy < 0 or cy >= ny or cz < 0 or cz >= nz:
                break
            if solid[cx, cy, cz]:
                out[i, 0] = cx
                out[i, 1] = cy
                out[i, 2] = cz
                break


if _HAVE_NUMBA:
    _ray_first_hit = njit(cache=True)(_ray_first_hit_py)
else:  # pragma: no cover
    _ray_first_hit = _ray_first_hit_py


def ray_first_hit_batch(solid: np.ndarray, resolution: float, origin: np.ndarray,
                        starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    """First solid cell entered by each world-frame segment, (-1,-1,-1) if none."""
    starts = (np.atleast_2d(np.asarray(starts, dtype=np.float64)) - origin) / resolution
    ends = (np.atleast_2d(np.asarray(ends, dtype=np.float64)) - origin) / resolution
    out = np.empty((starts.shape[0], 3), dtype=np.int32)
    _ray_first_hit(solid, np.ascontiguousarray(starts), np.ascontiguousarray(ends), out)
    return out


def cast_ray(grid: VoxelGrid, start, end) -> tuple[int, int, int] | None:
    """First solid voxel hit by the segment from start to end, or None.

    A ray that begins inside a solid voxel reports that voxel.
    """
    hit = ray_first_hit_batch(
        grid.solid, grid.resolution, grid.origin,
        np.asarray(start, dtype=np.float64), np.asarray(end, dtype=np.float64),
    )[0]
    if hit[0] < 0:
        return None
    return (int(hit[0]), int(hit[1]), int(hit[2]))


# -- collision ------------------------------------------------------------------


def collision_free(grid: VoxelGrid, point, inflation: float) -> bool:
    """True iff no solid voxel lies strictly within inflation of the point.

    Distances are to the solid voxel's box. A point exactly at surface
    distance == inflation is free (strict-less comparison). Points outside
    the grid are reported as not free.
    """
    return collision_free_mask(grid.solid, grid.resolution, grid.origin, point, inflation)


def collision_free_mask(solid: np.ndarray, resolution: float, origin, point,
                        inflation: float) -> bool:
    p = np.asarray(point, dtype=np.float64)
    g = (p - np.asarray(origin)) / resolution
    dims = solid.shape
    if np.any(g < 0.0) or np.any(g >= np.array(dims)):
        return False
    cx, cy, cz = int(g[0]), int(g[1]), int(g[2])
    if solid[cx, cy, cz]:
        return False
    reach = int(math.ceil(inflation / resolution)) + 1
    x0, x1 = max(0, cx - reach), min(dims[0], cx + reach + 1)
    y0, y1 = max(0, cy - reach), min(dims[1], cy + reach + 1)
    z0, z1 = max(0, cz - reach), min(dims[2], cz + reach + 1)
    sub = solid[x0:x1, y0:y1, z0:z1]
    if not sub.any():
        return True
    xs, ys, zs = np.nonzero(sub)
    lo = np.stack([xs + x0, ys + y0, zs + z0], axis=1).astype(np.float64)
    # distance to the closest point of each solid box, grid units then scaled
    clamped = np.clip(g, lo, lo + 1.0)
    d = np.linalg.norm((clamped - g), axis=1) * resolution
    return bool(np.all(d >= inflation))


# -- scenario -------------------------------------------------------------------


@dataclass
class Scenario:
    name: str
    grid: VoxelGrid
    objects: list[SceneObject]
    instruction: str
    start_pose: Pose
    success_radius: float = 5.0
    query_budget: int = 50
    template: str | None = None
    seed: int | None = None

    @property
    def target(self) -> SceneObject:
        for obj in self.objects:
            if obj.is_target:
                return obj
        raise ScenarioError("scenario has no target object")

    def solid_fraction(self) -> float:
        return float(self.grid.solid.mean())


def _encode_rle(mask: np.ndarray) -> list[list[int]]:
    """Run-length encode a boolean grid as [x, y, z, run] runs along +x."""
    runs = []
    nx, ny, nz = mask.shape
    for y in range(ny):
        for z in range(nz):
            col = mask[:, y, z]
            x = 0
            while x < nx:
                if col[x]:
                    x0 = x
                    while x < nx and col[x]:
                        x += 1
                    runs.append([x0, y, z, x - x0])
                else:
                    x += 1
    return runs


def _decode_rle(runs, dims, what: str) -> np.ndarray:
    mask = np.zeros(dims, dtype=bool)
    nx, ny, nz = dims
    for i, run in enumerate(runs):
        if len(run) != 4:
            raise ScenarioError(f"{what}[{i}]: run must be [x, y, z, count]")
        x, y, z, count = (int(v) for v in run)
        if count <= 0:
            raise ScenarioError(f"{what}[{i}]: run count must be positive")
        if not (0 <= x < nx and 0 <= y < ny and 0 <= z < nz) or x + count > nx:
            raise ScenarioError(f"{what}[{i}]: run exits grid bounds")
        mask[x:x + count, y, z] = True
    return mask


def scenario_to_dict(sc: Scenario) -> dict:
    grid = sc.grid
    regions = {}
    for code, tag in enumerate(grid.region_tags):
        mask = grid.region == code
        if mask.any():
            regions[tag] = _encode_rle(mask)
    return {
        "schema": SCHEMA_VERSION,
        "name": sc.name,
        "dims": list(grid.dims),
        "resolution": grid.resolution,
        "origin": [float(v) for v in grid.origin],
        "solids": _encode_rle(grid.solid),
        "regions": regions,
        "objects": [o.to_dict() for o in sc.objects],
        "instruction": sc.instruction,
        "start_pose": sc.start_pose.to_list(),
        "success_radius": sc.success_radius,
        "query_budget": sc.query_budget,
        "template": sc.template,
        "seed": sc.seed,
    }


_ALLOWED_SCENARIO_KEYS = {
    "schema", "name", "dims", "resolution", "origin", "solids", "regions",
    "objects", "instruction", "start_pose", "success_radius", "query_budget",
    "template", "seed",
}


def scenario_from_dict(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError("scenario document must be a JSON object")
    unknown = set(data) - _ALLOWED_SCENARIO_KEYS
    if unknown:
        raise ScenarioError(f"unknown scenario field(s): {sorted(unknown)}")
    if data.get("schema") != SCHEMA_VERSION:
        raise ScenarioError(
            f"unsupported schema version {data.get('schema')!r}, expected {SCHEMA_VERSION}")
    for key in ("dims", "resolution", "solids", "objects", "instruction", "start_pose"):
        if key not in data:
            raise ScenarioError(f"missing required field '{key}'")

    grid = VoxelGrid(tuple(data["dims"]), float(data["resolution"]),
                     tuple(data.get("origin", (0.0, 0.0, 0.0))))
    grid.solid = _decode_rle(data["solids"], grid.dims, "solids")

    for tag, runs in (data.get("regions") or {}).items():
        mask = _decode_rle(runs, grid.dims, f"regions[{tag}]")
        grid.region[mask] = grid.region_code(tag)

    objects = []
    seen_ids = set()
    n_targets = 0
    for i, od in enumerate(data["objects"]):
        for key in ("id", "category", "position", "footprint"):
            if key not in od:
                raise ScenarioError(f"objects[{i}]: missing field '{key}'")
        oid = int(od["id"])
        if oid in seen_ids:
            raise ScenarioError(f"objects[{i}]: duplicate object id {oid}")
        seen_ids.add(oid)
        footprint = [tuple(int(v) for v in f) for f in od["footprint"]]
        if not footprint:
            raise ScenarioError(f"objects[{i}]: footprint must be non-empty")
        for f in footprint:
            if not grid.in_bounds(f):
                raise ScenarioError(f"objects[{i}]: footprint cell {f} out of bounds")
        obj = SceneObject(
            object_id=oid,
            category=str(od["category"]),
            position=np.asarray(od["position"], dtype=np.float64),
            footprint=footprint,
            is_target=bool(od.get("is_target", False)),
        )
        if not grid.point_in_bounds(obj.position):
            raise ScenarioError(f"objects[{i}]: position outside grid")
        n_targets += int(obj.is_target)
        objects.append(obj)
        for f in footprint:
            grid.solid[f] = True
            grid.object_id[f] = oid
    if n_targets != 1:
        raise ScenarioError(f"scenario must contain exactly one target object, found {n_targets}")

    start_pose = Pose.from_list(data["start_pose"])
    if not grid.point_in_bounds(start_pose.position):
        raise ScenarioError("start_pose outside grid")
    if grid.solid[grid.world_to_index(start_pose.position)]:
        raise ScenarioError("start_pose lies inside a solid voxel")

    success_radius = float(data.get("success_radius", 5.0))
    if success_radius <= 0:
        raise ScenarioError("success_radius must be positive")
    query_budget = int(data.get("query_budget", 50))
    if query_budget < 1:
        raise ScenarioError("query_budget must be at least 1")

    return Scenario(
        name=str(data.get("name", "unnamed")),
        grid=grid,
        objects=objects,
        instruction=str(data["instruction"]),
        start_pose=start_pose,
        success_radius=success_radius,
        query_budget=query_budget,
        template=data.get("template"),
        seed=data.get("seed"),
    )


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))


def save_scenario(sc: Scenario, path) -> None:
    with open(path, "w") as fh:
        json.dump(scenario_to_dict(sc), fh, indent=1, sort_keys=True)
        fh.write("\n")


# -- procedural templates --------------------------------------------------------


def _rng_for(template: str, seed: int) -> np.random.Generator:
    tid = TEMPLATES.index(template)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([917, tid, seed])))


def _free_ground_cells(grid: VoxelGrid, region_tag: str | None = None) -> list[tuple[int, int]]:
    """Columns (x, y) whose z=1 cell is free, optionally restricted to a region tag."""
    nx, ny, _ = grid.dims
    out = []
    code = grid.region_tags.index(region_tag) if region_tag in grid.region_tags else None
    for x in range(nx):
        for y in range(ny):
            if grid.solid[x, y, 1]:
                continue
            if code is not None and grid.region[x, y, 1] != code:
                continue
            out.append((x, y))
    return out


def _place_object(grid: VoxelGrid, rng, region_tag, shape, min_dist_from,
                  min_dist=0.0, tries=200) -> tuple[int, int] | None:
    """Pick an anchor column in a region where the footprint shape fits on free cells."""
    cells = _free_ground_cells(grid, region_tag)
    if not cells:
        return None
    for _ in range(tries):
        x, y = cells[int(rng.integers(len(cells)))]
        ok = True
        for dx, dy in shape:
            xx, yy = x + dx, y + dy
            if not (0 <= xx < grid.dims[0] and 0 <= yy < grid.dims[1]) or grid.solid[xx, yy, 1]:
                ok = False
                break
        if not ok:
            continue
        if min_dist_from is not None and min_dist > 0.0:
            c = grid.index_to_center((x, y, 1))
            if float(np.linalg.norm(c[:2] - np.asarray(min_dist_from)[:2])) < min_dist:
                continue
        return (x, y)
    return None


_FOOTPRINTS = {
    "backpack": [(0, 0)],
    "trash_bin": [(0, 0)],
    "bench": [(0, 0), (1, 0)],
    "car": [(0, 0), (1, 0)],
    "tent": [(0, 0), (1, 0), (0, 1), (1, 1)],
    "boat": [(0, 0), (1, 0), (2, 0)],
    "umbrella": [(0, 0)],
    "crate": [(0, 0)],
    "barrel": [(0, 0)],
    "bicycle": [(0, 0)],
}


def _add_object(grid: VoxelGrid, objects: list[SceneObject], rng, category: str,
                region_tag: str | None, is_target: bool, start_xy=None,
                min_dist=0.0) -> SceneObject | None:
    anchor = _place_object(grid, rng, region_tag, _FOOTPRINTS[category],
                           start_xy, min_dist)
    if anchor is None:
        return None
    x, y = anchor
    foot = [(x + dx, y + dy, 1) for dx, dy in _FOOTPRINTS[category]]
    obj = SceneObject(
        object_id=len(objects),
        category=category,
        position=grid.index_to_center((x, y, 1)),
        footprint=foot,
        is_target=is_target,
    )
    for f in foot:
        grid.solid[f] = True
        grid.object_id[f] = obj.object_id
    objects.append(obj)
    return obj


def _spawn_distractors(grid, objects, rng, spec, start_xy):
    for category, region in spec:
        _add_object(grid, objects, rng, category, region, False, start_xy, 3.0)


def _finish(name, template, seed, grid, objects, instruction, start_pose,
            success_radius=5.0, query_budget=50) -> Scenario:
    sc = Scenario(
        name=name, grid=grid, objects=objects, instruction=instruction,
        start_pose=start_pose, success_radius=success_radius,
        query_budget=query_budget, template=template, seed=seed,
    )
    # round-trip through the validator so generated and loaded scenarios obey
    # the same invariants
    return scenario_from_dict(scenario_to_dict(sc))


def _gen_open_field(seed: int) -> Scenario:
    rng = _rng_for("open_field", seed)
    grid = VoxelGrid((24, 24, 5), 1.0)
    grid.solid[:, :, 0] = True  # ground plane
    for x in range(24):
        for y in range(24):
            grid.paint_region_column(x, y, "road" if y < 3 else "field")
    # sparse tree columns in the field
    for _ in range(6):
        x = int(rng.integers(3, 23))
        y = int(rng.integers(6, 23))
        grid.solid[x, y, 1:3] = True
    start = Pose(1.5, 4.5, 2.5, 0.0)
    objects: list[SceneObject] = []
    variant = int(rng.integers(2))
    if variant == 0:
        instruction = "find the red backpack lying in the field"
        target = _add_object(grid, objects, rng, "backpack", "field", True,
                             (start.x, start.y), 10.0)
        _spawn_distractors(grid, objects, rng,
                           [("trash_bin", "road"), ("bench", "field"), ("crate", "field")],
                           (start.x, start.y))
    else:
        instruction = "find the trash bin standing by the road"
        target = _add_object(grid, objects, rng, "trash_bin", "road", True,
                             (start.x, start.y), 10.0)
        _spawn_distractors(grid, objects, rng,
                           [("backpack", "field"), ("barrel", "field"), ("bench", "field")],
                           (start.x, start.y))
    if target is None:
        raise ScenarioError(f"open_field seed {seed}: could not place target")
    return _finish(f"open_field-{seed:03d}", "open_field", seed, grid, objects,
                   instruction, start)


def _gen_urban_blocks(seed: int) -> Scenario:
    rng = _rng_for("urban_blocks", seed)
    grid = VoxelGrid((26, 26, 6), 1.0)
    grid.solid[:, :, 0] = True
    blocks = [3, 11, 19]
    plaza = (int(rng.integers(3)), int(rng.integers(3)))
    for x in range(26):
        for y in range(26):
            grid.paint_region_column(x, y, "road")
    for bi, bx in enumerate(blocks):
        for bj, by in enumerate(blocks):
            if (bi, bj) == plaza:
                for x in range(bx, bx + 4):
                    for y in range(by, by + 4):
                        grid.paint_region_column(x, y, "plaza")
                continue
            h = int(rng.integers(3, 5))
            grid.solid[bx:bx + 4, by:by + 4, 1:1 + h] = True
            for x in range(bx, bx + 4):
                for y in range(by, by + 4):
                    grid.paint_region_column(x, y, "block")
    start = Pose(1.5, 1.5, 2.5, 0.0)
    objects: list[SceneObject] = []
    variant = int(rng.integers(2))
    if variant == 0:
        instruction = "find the silver car parked on the road"
        target = _add_object(grid, objects, rng, "car", "road", True,
                             (start.x, start.y), 12.0)
        _spawn_distractors(grid, objects, rng,
                           [("crate", "plaza"), ("trash_bin", "road"), ("bench", "plaza")],
                           (start.x, start.y))
    else:
        instruction = "find the wooden crate left in the plaza"
        target = _add_object(grid, objects, rng, "crate", "plaza", True,
                             (start.x, start.y), 10.0)
        _spawn_distractors(grid, objects, rng,
                           [("car", "road"), ("barrel", "road"), ("trash_bin", "road")],
                           (start.x, start.y))
    if target is None:
        raise ScenarioError(f"urban_blocks seed {seed}: could not place target")
    return _finish(f"urban_blocks-{seed:03d}", "urban_blocks", seed, grid, objects,
                   instruction, start)


def _gen_forest_corridor(seed: int) -> Scenario:
    rng = _rng_for("forest_corridor", seed)
    grid = VoxelGrid((30, 18, 5), 1.0)
    grid.solid[:, :, 0] = True
    trail_y = [int(round(8 + 4 * math.sin(x / 5.0 + float(rng.uniform(0, 2 * math.pi)))))
               for x in range(30)]
    clearing_x = int(rng.integers(16, 26))
    clearing = (clearing_x, trail_y[clearing_x])
    for x in range(30):
        for y in range(18):
            d_clear = math.hypot(x - clearing[0], y - clearing[1])
            if d_clear <= 3.0:
                grid.paint_region_column(x, y, "clearing")
            elif abs(y - trail_y[x]) <= 1:
                grid.paint_region_column(x, y, "trail")
            else:
                grid.paint_region_column(x, y, "forest")
                if rng.random() < 0.18:
                    grid.solid[x, y, 1:1 + int(rng.integers(2, 4))] = True
    start = Pose(1.5, trail_y[1] + 0.5, 2.5, 0.0)
    objects: list[SceneObject] = []
    variant = int(rng.integers(2))
    if variant == 0:
        instruction = "find the blue tent pitched in the clearing"
        target = _add_object(grid, objects, rng, "tent", "clearing", True,
                             (start.x, start.y), 10.0)
        _spawn_distractors(grid, objects, rng,
                           [("bicycle", "trail"), ("crate", "trail")],
                           (start.x, start.y))
    else:
        instruction = "find the bicycle left on the trail"
        target = _add_object(grid, objects, rng, "bicycle", "trail", True,
                             (start.x, start.y), 12.0)
        _spawn_distractors(grid, objects, rng,
                           [("tent", "clearing"), ("barrel", "forest")],
                           (start.x, start.y))
    if target is None:
        raise ScenarioError(f"forest_corridor seed {seed}: could not place target")
    return _finish(f"forest_corridor-{seed:03d}", "forest_corridor", seed, grid,
                   objects, instruction, start)


def _gen_waterfront(seed: int) -> Scenario:
    rng = _rng_for("waterfront", seed)
    grid = VoxelGrid((26, 20, 5), 1.0)
    grid.solid[:, :, 0] = True
    for x in range(26):
        for y in range(20):
            if y < 8:
                grid.paint_region_column(x, y, "water")
            elif y < 12:
                grid.paint_region_column(x, y, "beach")
            else:
                grid.paint_region_column(x, y, "promenade")
    # kiosks on the promenade
    for _ in range(3):
        x = int(rng.integers(2, 23))
        y = int(rng.integers(13, 18))
        grid.solid[x:x + 2, y:y + 2, 1:3] = True
    start = Pose(2.5, 17.5, 2.5, 0.0)
    objects: list[SceneObject] = []
    variant = int(rng.integers(2))
    if variant == 0:
        instruction = "find the white boat moored on the water"
        target = _add_object(grid, objects, rng, "boat", "water", True,
                             (start.x, start.y), 10.0)
        _spawn_distractors(grid, objects, rng,
                           [("umbrella", "beach"), ("crate", "promenade"), ("bench", "promenade")],
                           (start.x, start.y))
    else:
        instruction = "find the beach umbrella planted on the beach"
        target = _add_object(grid, objects, rng, "umbrella", "beach", True,
                             (start.x, start.y), 8.0)
        _spawn_distractors(grid, objects, rng,
                           [("boat", "water"), ("crate", "promenade"), ("barrel", "promenade")],
                           (start.x, start.y))
    if target is None:
        raise ScenarioError(f"waterfront seed {seed}: could not place target")
    return _finish(f"waterfront-{seed:03d}", "waterfront", seed, grid, objects,
                   instruction, start)


_GENERATORS = {
    "open_field": _gen_open_field,
    "urban_blocks": _gen_urban_blocks,
    "forest_corridor": _gen_forest_corridor,
    "waterfront": _gen_waterfront,
}


def generate_scenario(template: str, seed: int) -> Scenario:
    """Deterministically generate a scenario from a named template and a seed."""
    if template not in _GENERATORS:
        raise ScenarioError(f"unknown template {template!r}, expected one of {TEMPLATES}")
    return _GENERATORS[template](int(seed))
