"""Semantic frontier clustering and viewpoint sampling.

A frontier voxel is a known-free cell with at least one unknown 6-neighbor.
Clusters grow from the lowest-index unvisited frontier voxel; a neighbor
joins when its map value differs from the seed's by less than tau_s.
Oversized clusters split recursively along their principal axis. Updates are
incremental: only spatial components touched by occupancy changes are
re-partitioned, which reproduces a from-scratch partition exactly because
growth never crosses component boundaries and seed order within a component
is index-canonical. A value-map revision change forces a full re-partition
since membership depends on the value snapshot.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .perception import OCC_FREE, OCC_OCCUPIED, OCC_UNKNOWN, SensorConfig
from .valuemap import ValueSnapshot
from .world import Pose, collision_free_mask, ray_first_hit_batch, wrap_angle


@dataclass
class FrontierConfig:
    tau_s: float = 0.2
    max_extent: float = 8.0
    min_cluster_size: int = 3
    viewpoint_radii: tuple[float, ...] = (3.0, 5.0)
    yaw_samples: int = 12
    inflation: float = 0.45


@dataclass
class Viewpoint:
    position: np.ndarray
    yaw: float
    gain: float
    index: int


@dataclass
class FrontierCluster:
    cluster_id: int
    cells: tuple[int, ...]  # sorted flat indices
    centroid: np.ndarray
    mean_value: float

    @property
    def size(self) -> int:
        return len(self.cells)


@dataclass
class FrontierUpdate:
    added_ids: list[int] = field(default_factory=list)
    removed_ids: list[int] = field(default_factory=list)
    new_frontier_cells: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    @property
    def changed(self) -> bool:
        return bool(self.added_ids or self.removed_ids)


def _neighbors6_flat(flats: np.ndarray, dims) -> np.ndarray:
    """All in-bounds 6-neighbors of the given flat indices (with duplicates)."""
    nx, ny, nz = dims
    x = flats // (ny * nz)
    rem = flats % (ny * nz)
    y = rem // nz
    z = rem % nz
    out = []
    for dx, dy, dz in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
        xx, yy, zz = x + dx, y + dy, z + dz
        ok = (xx >= 0) & (xx < nx) & (yy >= 0) & (yy < ny) & (zz >= 0) & (zz < nz)
        out.append((xx[ok] * ny + yy[ok]) * nz + zz[ok])
    return np.concatenate(out) if out else np.empty(0, dtype=np.int64)


def frontier_predicate(state: np.ndarray, flats: np.ndarray) -> np.ndarray:
    """Boolean mask: known-free cell with at least one unknown 6-neighbor."""
    dims = state.shape
    nx, ny, nz = dims
    flat_state = state.reshape(-1)
    result = flat_state[flats] == OCC_FREE
    if not result.any():
        return result
    x = flats // (ny * nz)
    rem = flats % (ny * nz)
    y = rem // nz
    z = rem % nz
    has_unknown = np.zeros(flats.size, dtype=bool)
    for dx, dy, dz in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
        xx, yy, zz = x + dx, y + dy, z + dz
        ok = (xx >= 0) & (xx < nx) & (yy >= 0) & (yy < ny) & (zz >= 0) & (zz < nz)
        nb = np.zeros(flats.size, dtype=np.int64)
        nb[ok] = (xx[ok] * ny + yy[ok]) * nz + zz[ok]
        has_unknown |= ok & (flat_state[nb] == OCC_UNKNOWN)
    return result & has_unknown


def grow_clusters(flats: np.ndarray, values_flat: np.ndarray, dims,
                  tau_s: float) -> list[list[int]]:
    """Canonical partition of frontier voxels by semantic region growing.

    Seeds are taken in ascending flat-index order; BFS claims unvisited
    6-neighbors whose value lies within tau_s of the seed's value. The result
    is independent of queue order and, per spatial component, independent of
    the other components.
    """
    nx, ny, nz = dims
    pending = set(int(f) for f in flats)
    out: list[list[int]] = []
    for seed in sorted(pending):
        if seed not in pending:
            continue
        v_seed = values_flat[seed]
        cluster = [seed]
        pending.discard(seed)
        queue = deque([seed])
        while queue:
            cur = queue.popleft()
            x, rem = divmod(cur, ny * nz)
            y, z = divmod(rem, nz)
            for dx, dy, dz in ((1, 0, 0), (-1, 0, 0), (0, 1, 0),
                               (0, -1, 0), (0, 0, 1), (0, 0, -1)):
                xx, yy, zz = x + dx, y + dy, z + dz
                if not (0 <= xx < nx and 0 <= yy < ny and 0 <= zz < nz):
                    continue
                nb = (xx * ny + yy) * nz + zz
                if nb in pending and abs(values_flat[nb] - v_seed) < tau_s:
                    pending.discard(nb)
                    cluster.append(nb)
                    queue.append(nb)
        out.append(sorted(cluster))
    return out


def split_cluster(cells: list[int], dims, resolution: float,
                  max_extent: float) -> list[list[int]]:
    """Recursively bisect along the principal axis until the bbox diagonal fits."""
    coords = _flats_to_coords(np.asarray(cells, dtype=np.int64), dims).astype(np.float64)
    span = (coords.max(axis=0) - coords.min(axis=0)) * resolution
    if float(np.linalg.norm(span)) <= max_extent or len(cells) < 2:
        return [sorted(cells)]
    centered = (coords - coords.mean(axis=0)) * resolution
    cov = centered.T @ centered
    eigvals, eigvecs = np.linalg.eigh(cov)
    axis = eigvecs[:, int(np.argmax(eigvals))]
    if axis[int(np.argmax(np.abs(axis)))] < 0:
        axis = -axis
    proj = centered @ axis
    left_mask = proj <= 0.0
    if left_mask.all() or not left_mask.any():
        # degenerate projection; split by index order
        half = len(cells) // 2
        ordered = sorted(cells)
        halves = [ordered[:half], ordered[half:]]
    else:
        arr = np.asarray(cells, dtype=np.int64)
        halves = [arr[left_mask].tolist(), arr[~left_mask].tolist()]
    out = []
    for half_cells in halves:
        out.extend(split_cluster(half_cells, dims, resolution, max_extent))
    return out


def _flats_to_coords(flats: np.ndarray, dims) -> np.ndarray:
    _, ny, nz = dims
    x = flats // (ny * nz)
    rem = flats % (ny * nz)
    return np.stack([x, rem // nz, rem % nz], axis=1)


class FrontierManager:
    """Maintains the frontier voxel set and its semantic cluster partition."""

    def __init__(self, dims, resolution: float, origin, config: FrontierConfig):
        self.dims = tuple(dims)
        self.resolution = float(resolution)
        self.origin = np.asarray(origin, dtype=np.float64)
        self.config = config
        n = self.dims[0] * self.dims[1] * self.dims[2]
        self.is_frontier = np.zeros(n, dtype=bool)
        self.cell_cluster = np.full(n, -1, dtype=np.int64)
        self.clusters: dict[int, FrontierCluster] = {}
        self._next_id = 0
        self._last_value_revision = -1

    # -- queries -----------------------------------------------------------------

    def frontier_cells(self) -> np.ndarray:
        return np.nonzero(self.is_frontier)[0]

    def canonical_partition(self) -> list[tuple[int, ...]]:
        """Cluster cell-sets, order-normalized for comparisons."""
        return sorted(c.cells for c in self.clusters.values())

    # -- updates -----------------------------------------------------------------

    def detect_changed_frontiers(self, state: np.ndarray,
                                 changed_flats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Apply occupancy changes to the frontier voxel set.

        Returns (newly_frontier, no_longer_frontier) flat indices. Only cells
        in the changed neighborhood (the changed cells and their 6-neighbors)
        can flip, so the predicate is re-evaluated just there.
        """
        if changed_flats.size == 0:
            empty = np.empty(0, dtype=np.int64)
            return empty, empty
        hood = np.unique(np.concatenate([changed_flats,
                                         _neighbors6_flat(changed_flats, self.dims)]))
        now = frontier_predicate(state, hood)
        was = self.is_frontier[hood]
        added = hood[now & ~was]
        removed = hood[was & ~now]
        self.is_frontier[added] = True
        self.is_frontier[removed] = False
        return added, removed

    def update(self, state: np.ndarray, changed_flats: np.ndarray,
               snapshot: ValueSnapshot) -> FrontierUpdate:
        added_vox, removed_vox = self.detect_changed_frontiers(state, changed_flats)
        full = snapshot.revision != self._last_value_revision
        self._last_value_revision = snapshot.revision

        if full:
            regrow = self.frontier_cells()
            removed_ids = list(self.clusters.keys())
        else:
            direct = {int(self.cell_cluster[v]) for v in removed_vox
                      if self.cell_cluster[v] >= 0}
            seeds = [added_vox]
            for cid in direct:
                seeds.append(np.asarray(self.clusters[cid].cells, dtype=np.int64))
            seed_set = np.unique(np.concatenate(seeds)) if seeds else added_vox
            seed_set = seed_set[self.is_frontier[seed_set]]
            regrow = self._component_closure(seed_set)
            hit = np.unique(self.cell_cluster[regrow]) if regrow.size else np.empty(0)
            removed_ids = sorted(direct | {int(c) for c in hit if c >= 0})
        if regrow.size == 0 and not removed_ids:
            self.cell_cluster[removed_vox] = -1
            return FrontierUpdate(new_frontier_cells=added_vox)

        for cid in removed_ids:
            cells = np.asarray(self.clusters.pop(cid).cells, dtype=np.int64)
            self.cell_cluster[cells] = -1
        self.cell_cluster[removed_vox] = -1

        added_ids = self._partition(regrow, snapshot)
        return FrontierUpdate(added_ids, removed_ids, added_vox)

    def recompute_from_scratch(self, state: np.ndarray,
                               snapshot: ValueSnapshot) -> list[tuple[int, ...]]:
        """Reference partition of the same occupancy and value snapshot."""
        n = state.size
        all_flats = np.arange(n, dtype=np.int64)
        frontier = all_flats[frontier_predicate(state, all_flats)]
        values = snapshot.sem.reshape(-1)
        raw = grow_clusters(frontier, values, self.dims, self.config.tau_s)
        out = []
        for cells in raw:
            for part in split_cluster(cells, self.dims, self.resolution,
                                      self.config.max_extent):
                if len(part) >= self.config.min_cluster_size:
                    out.append(tuple(part))
        return sorted(out)

    def _component_closure(self, seed_flats: np.ndarray) -> np.ndarray:
        """Expand seeds to full 6-connected components of the frontier voxel set."""
        if seed_flats.size == 0:
            return seed_flats
        seen = set(int(f) for f in seed_flats)
        queue = deque(seen)
        nx, ny, nz = self.dims
        frontier = self.is_frontier
        while queue:
            cur = queue.popleft()
            x, rem = divmod(cur, ny * nz)
            y, z = divmod(rem, nz)
            for dx, dy, dz in ((1, 0, 0), (-1, 0, 0), (0, 1, 0),
                               (0, -1, 0), (0, 0, 1), (0, 0, -1)):
                xx, yy, zz = x + dx, y + dy, z + dz
                if not (0 <= xx < nx and 0 <= yy < ny and 0 <= zz < nz):
                    continue
                nb = (xx * ny + yy) * nz + zz
                if nb not in seen and frontier[nb]:
                    seen.add(nb)
                    queue.append(nb)
        return np.asarray(sorted(seen), dtype=np.int64)

    def _partition(self, regrow: np.ndarray, snapshot: ValueSnapshot) -> list[int]:
        values = snapshot.sem.reshape(-1)
        raw = grow_clusters(regrow, values, self.dims, self.config.tau_s)
        added_ids = []
        for cells in raw:
            for part in split_cluster(cells, self.dims, self.resolution,
                                      self.config.max_extent):
                if len(part) < self.config.min_cluster_size:
                    continue
                cid = self._next_id
                self._next_id += 1
                arr = np.asarray(part, dtype=np.int64)
                centers = self.origin + (_flats_to_coords(arr, self.dims) + 0.5) * self.resolution
                cluster = FrontierCluster(
                    cluster_id=cid,
                    cells=tuple(int(c) for c in part),
                    centroid=centers.mean(axis=0),
                    mean_value=float(values[arr].mean()),
                )
                self.clusters[cid] = cluster
                self.cell_cluster[arr] = cid
                added_ids.append(cid)
        return added_ids


# -- viewpoints -------------------------------------------------------------------


def sample_viewpoints(cluster: FrontierCluster, state: np.ndarray, dims,
                      resolution: float, origin, config: FrontierConfig,
                      sensor: SensorConfig, snapshot: ValueSnapshot) -> list[Viewpoint]:
    """Cylindrical candidate viewpoints around the cluster centroid.

    A candidate survives when its cell is known-free, it clears obstacle
    inflation, and at least one cluster voxel is observable from it through
    the front camera frustum with an unobstructed ray past known-occupied
    cells. Gain is the sum of map values over the observable cluster voxels.
    Candidates snap to their cell center so a commanded goal always keeps the
    full half-cell clearance of a free voxel.
    """
    nx, ny, nz = dims
    known_occ = (state == OCC_OCCUPIED).reshape(dims)
    cells = np.asarray(cluster.cells, dtype=np.int64)
    centers = np.asarray(origin) + (_flats_to_coords(cells, dims) + 0.5) * resolution
    sems = snapshot.sem.reshape(-1)[cells]

    z_lo = float(origin[2]) + 1.5 * resolution
    z_hi = float(origin[2]) + (nz - 1.5) * resolution
    candidates = []
    idx = 0
    origin_arr = np.asarray(origin, dtype=np.float64)
    for radius in config.viewpoint_radii:
        for k in range(config.yaw_samples):
            ang = 2.0 * math.pi * k / config.yaw_samples
            pos = np.array([
                cluster.centroid[0] + radius * math.cos(ang),
                cluster.centroid[1] + radius * math.sin(ang),
                min(max(cluster.centroid[2], z_lo), z_hi),
            ])
            g = np.floor((pos - origin_arr) / resolution)
            if np.any(g < 0.0) or np.any(g >= np.array(dims)):
                idx += 1
                continue
            pos = origin_arr + (g + 0.5) * resolution
            yaw = wrap_angle(math.atan2(cluster.centroid[1] - pos[1],
                                        cluster.centroid[0] - pos[0]))
            candidates.append((idx, pos, yaw))
            idx += 1

    flat_state = state.reshape(-1)
    viable = []
    for cidx, pos, yaw in candidates:
        g = (pos - origin_arr) / resolution
        cell = (int(g[0]) * ny + int(g[1])) * nz + int(g[2])
        if flat_state[cell] != OCC_FREE:
            continue
        if not collision_free_mask(known_occ, resolution, origin, pos, config.inflation):
            continue
        viable.append((cidx, pos, yaw))
    if not viable:
        return []

    n_v, n_c = len(viable), cells.size
    starts = np.repeat(np.stack([v[1] for v in viable]), n_c, axis=0)
    ends = np.tile(centers, (n_v, 1))
    hits = ray_first_hit_batch(known_occ, resolution, np.asarray(origin), starts, ends)
    clear = (hits[:, 0] < 0).reshape(n_v, n_c)

    out = []
    for row, (cidx, pos, yaw) in enumerate(viable):
        rel = centers - pos
        az = np.arctan2(rel[:, 1], rel[:, 0])
        horiz = np.hypot(rel[:, 0], rel[:, 1])
        elev = np.arctan2(rel[:, 2], horiz)
        dist = np.linalg.norm(rel, axis=1)
        infrustum = (np.abs(np.angle(np.exp(1j * (az - yaw)))) <= sensor.fov_h / 2.0 + 1e-12)
        infrustum &= np.abs(elev) <= sensor.fov_v / 2.0 + 1e-12
        infrustum &= (dist <= sensor.detect_range) & (dist > 1e-9)
        observable = infrustum & clear[row]
        if not observable.any():
            continue
        out.append(Viewpoint(pos, yaw, float(sems[observable].sum()), cidx))
    return out


def prime_viewpoint(viewpoints: list[Viewpoint], drone_position) -> Viewpoint | None:
    """Highest-gain viewpoint; ties prefer proximity to the drone, then index."""
    if not viewpoints:
        return None
    p = np.asarray(drone_position, dtype=np.float64)
    return min(viewpoints,
               key=lambda v: (-v.gain, float(np.linalg.norm(v.position - p)), v.index))
