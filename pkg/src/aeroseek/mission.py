"""Dual-pathway asynchronous mission runtime.

A fixed-rate planner tick drives sensing, frontier maintenance, tour
replanning, and kinematic path execution; oracle queries ride a separate
asynchronous pathway whose responses are applied between ticks. The tick
NEVER waits on a pending query, so consecutive tick times always differ by
exactly planner_tick in episode time. A synchronous-blocking reference mode
(mission.blocking_oracle) instead freezes the drone for each query's latency,
which is the comparison baseline for the hover-elimination measurement.

Phases: Initialize (full spin at max yaw rate, instruction query dispatched
on the first tick) -> Search (keyframe gating, value fusion, frontier tour)
-> NavigateToTarget (after a verification latch) -> Done. The outcome is
Success exactly when the final pose lies within the scenario success radius
of the true target; any non-collision termination inside that radius counts.
"""

from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .frontier import FrontierManager, prime_viewpoint, sample_viewpoints
from .keyframes import KIND_COVERAGE, KIND_TASK, KeyframeGate
from .oracle import (KIND_CATEGORIES, KIND_SCORE, KIND_VERIFY, AsyncOracleClient,
                     BudgetExhaustedError, OracleParams, QueryLedger, RemoteOracle,
                     ScriptedOracle, build_categories_request, build_score_request,
                     build_verify_request)
from .perception import (OCC_FREE, OCC_OCCUPIED, AgentMap, DetectorNoise, Observation,
                         detect_objects, sense)
from .tour import (CORNER_GUARDS, PlanningGraph, build_cost_matrix, build_precedence,
                   choose_scalarization, choose_value_greedy, geometric_cost, solve_sop,
                   two_stage_order)
from .valuemap import ValueMap
from .world import Pose, Scenario, collision_free, ray_first_hit_batch, wrap_angle

PHASE_INITIALIZE = "initialize"
PHASE_SEARCH = "search"
PHASE_NAVIGATE = "navigate_to_target"
PHASE_DONE = "done"

OUTCOME_SUCCESS = "success"
OUTCOME_COLLISION = "collision"
OUTCOME_MAX_STEPS = "max_steps"
OUTCOME_WRONG_OBJECT = "wrong_object"

SUB_TIMEOUT = "timeout"
SUB_EXHAUSTED = "exhausted"
SUB_BUDGET = "budget"

# hard body radius for the ground-truth collision invariant; planning uses the
# larger frontier.inflation against the known map
COLLISION_MARGIN = 0.25

# cap on clusters entering one tour instance; excess drops lowest-value first
MAX_PLAN_CLUSTERS = 25

# path cells closer than this are re-validated against the known map each tick
LOOKAHEAD_M = 2.0

_SEED_TAG = 40417


class PathFollower:
    """Polyline execution under trapezoidal speed and yaw-rate limits.

    Speed ramps at a_max toward v_max, capped by sqrt(2 a d_remaining) so the
    drone decelerates to rest exactly at the final waypoint. Yaw slews toward
    the path tangent (or the commanded final yaw once position converges) at
    most omega_max per second. Motion never leaves the polyline.
    """

    def __init__(self, kinematics):
        self.kin = kinematics
        self.waypoints: list[np.ndarray] = []
        self.final_yaw: float | None = None
        self.speed = 0.0

    @property
    def idle(self) -> bool:
        return not self.waypoints

    def set_path(self, waypoints, final_yaw: float | None = None) -> None:
        self.waypoints = [np.asarray(w, dtype=np.float64) for w in waypoints]
        self.final_yaw = final_yaw

    def clear(self) -> None:
        self.waypoints = []
        self.final_yaw = None
        self.speed = 0.0

    def remaining(self, position: np.ndarray) -> float:
        if not self.waypoints:
            return 0.0
        total = float(np.linalg.norm(self.waypoints[0] - position))
        for a, b in zip(self.waypoints, self.waypoints[1:]):
            total += float(np.linalg.norm(b - a))
        return total

    def settled(self, pose: Pose, tol: float = 0.05) -> bool:
        if self.waypoints:
            return False
        if self.final_yaw is None:
            return True
        return abs(wrap_angle(self.final_yaw - pose.yaw)) <= tol

    def advance(self, pose: Pose, dt: float) -> Pose:
        pos = np.array([pose.x, pose.y, pose.z], dtype=np.float64)
        # consume waypoints we are already standing on; the speed ramp is
        # zero at zero remaining distance and would never pop them
        while self.waypoints and float(np.linalg.norm(self.waypoints[0] - pos)) <= 1e-9:
            pos = self.waypoints.pop(0)
            if not self.waypoints:
                self.speed = 0.0
        if self.waypoints:
            d_rem = self.remaining(pos)
            self.speed = min(self.speed + self.kin.a_max * dt, self.kin.v_max,
                             math.sqrt(2.0 * self.kin.a_max * max(d_rem, 0.0)))
            travel = self.speed * dt
            while travel > 1e-12 and self.waypoints:
                leg = self.waypoints[0] - pos
                seg = float(np.linalg.norm(leg))
                if seg <= travel:
                    pos = self.waypoints.pop(0)
                    travel -= seg
                else:
                    pos = pos + leg * (travel / seg)
                    travel = 0.0
            if not self.waypoints:
                self.speed = 0.0
        if self.waypoints:
            leg = self.waypoints[0] - pos
            if math.hypot(leg[0], leg[1]) > 1e-6:
                target_yaw = math.atan2(leg[1], leg[0])
            elif self.final_yaw is not None:
                target_yaw = self.final_yaw
            else:
                target_yaw = pose.yaw
        elif self.final_yaw is not None:
            target_yaw = self.final_yaw
        else:
            target_yaw = pose.yaw
        err = wrap_angle(target_yaw - pose.yaw)
        step = self.kin.omega_max * dt
        yaw = wrap_angle(pose.yaw + min(max(err, -step), step))
        return Pose(float(pos[0]), float(pos[1]), float(pos[2]), yaw)


@dataclass
class MissionResult:
    outcome: str
    sub_reason: str
    ft: float                     # episode flight time incl. blocking stalls
    sim_time: float               # tick-clock time (excludes stalls)
    stall_total: float
    ticks: int
    final_pose: Pose
    distance_to_target: float
    min_distance_to_target: float
    path_length: float
    queries_used: int
    verified: bool
    latched_object_id: int | None
    keyframes_admitted: dict
    keyframes_drained: dict
    clusters_final: int
    plan_timings_ms: list[float] = field(default_factory=list)
    trace: list[dict] = field(default_factory=list)


class MissionRunner:
    def __init__(self, scenario: Scenario, cfg: RunConfig, backend=None,
                 episode_seed: int = 0):
        self.scenario = scenario
        self.cfg = cfg
        self.grid = scenario.grid
        det_ss, orc_ss, lat_ss = np.random.SeedSequence(
            [_SEED_TAG, scenario.seed, episode_seed]).spawn(3)
        self.detector_rng = np.random.Generator(np.random.PCG64(det_ss))
        oracle_rng = np.random.Generator(np.random.PCG64(orc_ss))
        self.latency_rng = np.random.Generator(np.random.PCG64(lat_ss))

        mode = cfg.run.oracle_mode
        if backend is not None:
            self.backend = backend
        elif mode == "remote":
            self.backend = RemoteOracle(cfg.run.oracle_endpoint)
        elif mode == "perfect":
            self.backend = ScriptedOracle(scenario, OracleParams.perfect(), oracle_rng)
        else:
            self.backend = ScriptedOracle(scenario, cfg.oracle, oracle_rng)
        self.noise = DetectorNoise() if mode == "perfect" else cfg.detector

        self.ledger = QueryLedger(scenario.query_budget)
        self.client = AsyncOracleClient(self.backend, cfg.latency, self.ledger,
                                        self.latency_rng)
        self.amap = AgentMap(self.grid.dims)
        # the ground plane is known a priori (altimeter); without this, solid
        # ground cells are only observable near-vertically and their unknown
        # state pins the free cells above them as frontiers forever
        nz = self.grid.dims[2]
        ground = np.arange(0, self.grid.dims[0] * self.grid.dims[1] * nz, nz,
                           dtype=np.int64)
        self.amap.apply(np.empty(0, dtype=np.int64), ground)
        self.vmap = ValueMap(self.grid, cfg.valuemap.prior, cfg.valuemap.d_max)
        self.gate = KeyframeGate(cfg.keyframes)
        self.frontiers = FrontierManager(self.grid.dims, self.grid.resolution,
                                         self.grid.origin, cfg.frontier)
        self.follower = PathFollower(cfg.kinematics)

        self.pose = scenario.start_pose
        self.phase = PHASE_INITIALIZE
        self.outcome: str | None = None
        self.sub_reason = ""
        self.tick_index = 0
        self.stall_total = 0.0
        self.spin_remaining = 2.0 * math.pi
        self.categories_sent = False
        self.categories_known = False
        self.target_position = np.asarray(scenario.target.position, dtype=np.float64)
        self.latched: tuple[np.ndarray, int | None] | None = None
        self.current_tour: list[int] = []
        self.goal: dict | None = None
        self.path_length = 0.0
        self.min_distance = self._distance_to_target()
        self.trace: list[dict] = []
        self.plan_timings_ms: list[float] = []
        # most recent tour instance (matrix, pairs, cluster ids), kept for export
        self.last_sop_instance: tuple | None = None

        self._score_pending: dict[int, list] = {}
        self._verify_pending: dict[int, list] = {}
        self._graph: PlanningGraph | None = None
        self._graph_revision = -1
        self._replan_trigger = True
        self._last_replan = -math.inf
        self._last_nav_plan = -math.inf
        self._last_progress = 0.0
        self._cooldowns: list[tuple[np.ndarray, float]] = []
        self._rejected: list[tuple[np.ndarray, float]] = []
        self._budget_hit = False

    # -- clocks ------------------------------------------------------------------

    @property
    def exec_time(self) -> float:
        """Tick-clock episode time; excludes blocking stalls by construction."""
        return self.tick_index * self.cfg.mission.planner_tick

    @property
    def mission_time(self) -> float:
        return self.exec_time + self.stall_total

    # -- top level ---------------------------------------------------------------

    def run(self) -> MissionResult:
        while self.phase != PHASE_DONE:
            if self.exec_time >= self.cfg.mission.max_sim_time:
                self._finish(OUTCOME_MAX_STEPS, SUB_TIMEOUT)
                break
            self.step()
        return self._result()

    def step(self) -> None:
        t = self.exec_time
        dt = self.cfg.mission.planner_tick
        events: list[str] = []

        sensed = sense(self.grid, self.pose, self.cfg.sensor)
        changed = self.amap.apply(sensed.lidar_free, sensed.lidar_occupied)
        detections = detect_objects(self.scenario, self.pose, self.cfg.sensor,
                                    self.noise, self.detector_rng,
                                    sensed.camera_visible)
        obs = Observation(t, self.pose, sensed.camera_visible, detections)

        if self.phase in (PHASE_INITIALIZE, PHASE_SEARCH):
            if self.gate.try_admit_coverage(obs):
                events.append("kf:coverage")
            if self.gate.try_admit_task(self._without_rejected(obs, t)):
                events.append("kf:task")
            self._drain_gates(t, events)

        # dispatched here, right before the poll point, so the blocking mode
        # applies the answer at the same place in the tick as a zero-latency
        # asynchronous run would
        if not self.categories_sent:
            self._dispatch(build_categories_request(self.scenario.instruction), t, events)
            self.categories_sent = True

        for resp in self.client.poll(t):
            self._apply_response(resp, events)

        snapshot = self.vmap.snapshot()
        update = self.frontiers.update(self.amap.state, changed, snapshot)
        if update.changed or update.new_frontier_cells.size:
            self._replan_trigger = True
        if changed.size:
            self._last_progress = t

        if self.phase == PHASE_INITIALIZE:
            self._tick_initialize(dt, events)
        elif self.phase == PHASE_SEARCH:
            self._tick_search(t, dt, snapshot, events)
        elif self.phase == PHASE_NAVIGATE:
            self._tick_navigate(t, dt, events)

        if self.phase != PHASE_DONE:
            p = np.array([self.pose.x, self.pose.y, self.pose.z])
            if not collision_free(self.grid, p, COLLISION_MARGIN):
                self._finish(OUTCOME_COLLISION)

        d = self._distance_to_target()
        self.min_distance = min(self.min_distance, d)
        self.trace.append({
            "tick": self.tick_index,
            "t": t,
            "mission_time": round(self.mission_time, 9),
            "pose": self.pose.to_list(),
            "phase": self.phase if self.outcome is None else PHASE_DONE,
            "tour": list(self.current_tour),
            "pending": self.client.inflight(),
            "clusters": len(self.frontiers.clusters),
            "events": events,
        })
        self.tick_index += 1

        if self.phase != PHASE_DONE and t - self._last_progress > self.cfg.mission.stall_timeout:
            self._finish(OUTCOME_MAX_STEPS, SUB_TIMEOUT)

    # -- oracle plumbing ----------------------------------------------------------

    def _dispatch(self, request, t: float, events: list[str]) -> int | None:
        try:
            handle = self.client.dispatch(request, t)
        except BudgetExhaustedError:
            self._budget_hit = True
            return None
        if handle is None:
            return None
        events.append(f"dispatch:{request.kind}")
        if self.cfg.mission.blocking_oracle:
            latency = self.ledger.records[-1]["latency"]
            self.stall_total += latency
            for resp in self.client.poll(t + latency):
                self._apply_response(resp, events)
        return handle

    def _without_rejected(self, obs: Observation, t: float) -> Observation:
        """Copy of the observation without candidates inside the re-verify holdoff.

        Keeps a noisy rejection of the true target from burning the whole
        query budget on the same candidate; it becomes eligible again once
        the holdoff expires.
        """
        holdoff = self.cfg.mission.reverify_holdoff
        if holdoff <= 0 or not self._rejected:
            return obs
        self._rejected = [(p, tr) for p, tr in self._rejected if t - tr < holdoff]
        if not self._rejected:
            return obs
        keep = [d for d in obs.detections
                if all(float(np.linalg.norm(d.position - p)) > 0.5
                       for p, _ in self._rejected)]
        if len(keep) == len(obs.detections):
            return obs
        return Observation(obs.timestamp, obs.pose, obs.visible_cells, keep)

    def _drain_gates(self, t: float, events: list[str]) -> None:
        cap = self.client.max_inflight_per_kind
        if (self.client.inflight(KIND_SCORE) < cap
                and self.ledger.remaining > self.cfg.mission.verify_reserve):
            batch = self.gate.drain_if_full(KIND_COVERAGE)
            if batch:
                handle = self._dispatch(build_score_request(self.grid, batch), t, events)
                if handle is not None:
                    self._score_pending[handle] = batch
        if self.client.inflight(KIND_VERIFY) < cap and self.ledger.remaining > 0:
            batch = self.gate.drain_if_full(KIND_TASK)
            if batch:
                handle = self._dispatch(build_verify_request(batch), t, events)
                if handle is not None:
                    self._verify_pending[handle] = batch

    def _apply_response(self, resp, events: list[str]) -> None:
        events.append(f"response:{resp.kind}")
        if resp.kind == KIND_CATEGORIES:
            self.gate.target_categories = set(resp.payload["categories"])
            self.categories_known = True
        elif resp.kind == KIND_SCORE:
            batch = self._score_pending.pop(resp.request_id, [])
            for kf, score in zip(batch, resp.payload["scores"]):
                self.vmap.fuse(kf.visible_cells, kf.pose, float(score))
        elif resp.kind == KIND_VERIFY:
            batch = self._verify_pending.pop(resp.request_id, [])
            if resp.payload.get("match") and self.latched is None:
                ki = resp.payload["keyframe_index"]
                di = resp.payload["detection_index"]
                object_id = None
                if 0 <= ki < len(batch) and 0 <= di < len(batch[ki].detections):
                    object_id = batch[ki].detections[di].source_object_id
                self.latched = (np.asarray(resp.payload["position"], dtype=np.float64),
                                object_id)
                events.append("latch")
            elif not resp.payload.get("match"):
                now = self.exec_time
                for kf in batch:
                    for det in kf.detections:
                        self._rejected = [(p, tr) for p, tr in self._rejected
                                          if float(np.linalg.norm(det.position - p)) > 0.5]
                        self._rejected.append((det.position.copy(), now))

    # -- phases --------------------------------------------------------------------

    def _tick_initialize(self, dt: float, events: list[str]) -> None:
        step = min(self.cfg.kinematics.omega_max * dt, self.spin_remaining)
        self.spin_remaining -= step
        self.pose = Pose(self.pose.x, self.pose.y, self.pose.z,
                         wrap_angle(self.pose.yaw + step))
        self._last_progress = self.exec_time
        if self.spin_remaining <= 1e-9:
            self.phase = PHASE_SEARCH
            events.append("phase:search")

    def _tick_search(self, t: float, dt: float, snapshot, events: list[str]) -> None:
        if self.latched is not None:
            self.phase = PHASE_NAVIGATE
            self.follower.clear()
            self.goal = None
            self.current_tour = []
            self._last_progress = t
            events.append("phase:navigate_to_target")
            return
        if self.ledger.remaining <= 0 and self.client.inflight() == 0:
            self._finish(OUTCOME_MAX_STEPS, SUB_BUDGET)
            return
        if (not self.frontiers.clusters and not self.frontiers.is_frontier.any()
                and self.client.inflight() == 0 and self.follower.idle):
            self._finish(OUTCOME_MAX_STEPS, SUB_EXHAUSTED)
            return

        self._invalidate_blocked_path(events)
        idle = self.follower.idle and self.goal is None
        want = idle or (self._replan_trigger
                        and t - self._last_replan >= self.cfg.mission.replan_min_interval)
        if want:
            self._replan_search(t, snapshot, events)
        self._advance_motion(t, dt, events)

        if self.goal is not None and self.follower.settled(self.pose):
            self._cooldowns.append((self.goal["position"], t + self.cfg.mission.viewpoint_cooldown))
            events.append("arrived:viewpoint")
            self.goal = None
            self._replan_trigger = True

    def _tick_navigate(self, t: float, dt: float, events: list[str]) -> None:
        self._invalidate_blocked_path(events)
        upgrade = (self.goal is not None and self.goal["kind"] == "approach"
                   and t - self._last_nav_plan >= 1.0)
        if self.goal is None or upgrade:
            self._plan_navigate(t, events)
        self._advance_motion(t, dt, events)
        if self.goal is not None and self.follower.settled(self.pose):
            if self.goal["kind"] == "approach":
                # interim goal near the verified position; resample from here
                self.goal = None
            else:
                # stop decision: success iff the true target is inside the radius
                self._finish(OUTCOME_WRONG_OBJECT)

    # -- planning -------------------------------------------------------------------

    def _ensure_graph(self) -> PlanningGraph:
        if self._graph is None or self._graph_revision != self.amap.revision:
            self._graph = PlanningGraph.build(self.amap.state, self.grid.resolution,
                                              self.cfg.tour.unknown_penalty)
            self._graph_revision = self.amap.revision
        return self._graph

    def _pose_flat(self) -> int:
        return self.grid.flat(self.grid.world_to_index((self.pose.x, self.pose.y,
                                                        self.pose.z)))

    def _cooled(self, position: np.ndarray, t: float) -> bool:
        self._cooldowns = [(p, exp) for p, exp in self._cooldowns if exp > t]
        return any(float(np.linalg.norm(position - p)) < 1.0 for p, _ in self._cooldowns)

    def _set_goal_path(self, cell_path: list[int], position: np.ndarray, yaw: float,
                       kind: str, cluster: int | None = None) -> None:
        waypoints = [self.grid.index_to_center(self.grid.unflat(c)) for c in cell_path[1:]]
        if not waypoints or float(np.linalg.norm(waypoints[-1] - position)) > 1e-9:
            waypoints.append(position)
        self.follower.set_path(waypoints, final_yaw=yaw)
        self.goal = {"position": np.asarray(position, dtype=np.float64),
                     "yaw": float(yaw), "kind": kind, "cluster": cluster}

    def _replan_search(self, t: float, snapshot, events: list[str]) -> None:
        self._replan_trigger = False
        self._last_replan = t
        graph = self._ensure_graph()
        state = self.amap.state
        cfg = self.cfg

        entries = []  # (cluster_id, prime viewpoint)
        for cid in sorted(self.frontiers.clusters):
            cluster = self.frontiers.clusters[cid]
            vps = sample_viewpoints(cluster, state, self.grid.dims, self.grid.resolution,
                                    self.grid.origin, cfg.frontier, cfg.sensor, snapshot)
            vps = [v for v in vps if not self._cooled(v.position, t)]
            prime = prime_viewpoint(vps, np.array([self.pose.x, self.pose.y, self.pose.z]))
            if prime is not None:
                entries.append((cid, prime))
        if len(entries) > MAX_PLAN_CLUSTERS:
            entries.sort(key=lambda e: (-self.frontiers.clusters[e[0]].mean_value, e[0]))
            entries = sorted(entries[:MAX_PLAN_CLUSTERS], key=lambda e: e[0])

        if not entries:
            self._fallback_frontier_goal(graph, events)
            return

        start_flat = self._pose_flat()
        cells = [start_flat] + [self.grid.flat(self.grid.world_to_index(vp.position))
                                for _, vp in entries]
        dist_rows = graph.distances_from(cells)
        dists = dist_rows[:, cells]
        reachable = np.isfinite(dists[0])
        keep = [i for i in range(len(entries)) if reachable[i + 1]]
        if not keep:
            self._fallback_frontier_goal(graph, events)
            return
        entries = [entries[i] for i in keep]
        sel = np.asarray([0] + [i + 1 for i in keep])
        dists = dists[np.ix_(sel, sel)]
        if not np.all(np.isfinite(dists)):
            # viewpoints mutually unreachable (disjoint known regions): fall
            # back to the cheapest single viewpoint rather than a broken tour
            j = int(np.argmin(dists[0, 1:]))
            entries = [entries[j]]
            dists = dists[np.ix_([0, j + 1], [0, j + 1])]

        yaws = [self.pose.yaw] + [vp.yaw for _, vp in entries]
        values = [self.frontiers.clusters[cid].mean_value for cid, _ in entries]
        variant = cfg.run.variant

        t0 = _time.perf_counter()
        if variant == "sgcp":
            pairs = build_precedence(values, cfg.tour.rho)
            matrix = build_cost_matrix(dists, yaws, pairs, cfg.kinematics.v_max,
                                       cfg.kinematics.omega_max)
            tour = solve_sop(matrix, pairs, cfg.tour.exact_threshold)
            self.last_sop_instance = (matrix, pairs, [cid for cid, _ in entries])
            order = list(tour.order)
            first = order[0]
            self.current_tour = [entries[k][0] for k in order]
        elif variant == "value_greedy":
            cid = choose_value_greedy({cid: v for (cid, _), v in zip(entries, values)})
            first = [k for k, (c, _) in enumerate(entries) if c == cid][0]
            self.current_tour = [cid]
        elif variant == "scalarization":
            cluster_values = {cid: v for (cid, _), v in zip(entries, values)}
            costs = {cid: geometric_cost(float(dists[0, k + 1]), self.pose.yaw,
                                         entries[k][1].yaw, cfg.kinematics.v_max,
                                         cfg.kinematics.omega_max)
                     for k, (cid, _) in enumerate(entries)}
            cid = choose_scalarization(cluster_values, costs,
                                       cfg.tour.scalarization_cost_floor)
            first = [k for k, (c, _) in enumerate(entries) if c == cid][0]
            self.current_tour = [cid]
        else:  # two_stage
            ids = [cid for cid, _ in entries]
            pos_of = {cid: k for k, cid in enumerate(ids)}
            cluster_values = {cid: v for cid, v in zip(ids, values)}

            def matrix_builder(subset):
                sub_sel = [0] + [pos_of[c] + 1 for c in subset]
                sub_d = dists[np.ix_(sub_sel, sub_sel)]
                sub_yaws = [yaws[k] for k in sub_sel]
                return build_cost_matrix(sub_d, sub_yaws, [], cfg.kinematics.v_max,
                                         cfg.kinematics.omega_max)

            subset, tour = two_stage_order(ids, cluster_values, matrix_builder,
                                           cfg.tour.two_stage_threshold,
                                           cfg.tour.exact_threshold)
            ordered = [subset[k] for k in tour.order]
            first = pos_of[ordered[0]]
            self.current_tour = ordered
        self.plan_timings_ms.append((_time.perf_counter() - t0) * 1000.0)

        cid, vp = entries[first]
        goal_flat = self.grid.flat(self.grid.world_to_index(vp.position))
        _, cell_path = graph.shortest_path(self._pose_flat(), goal_flat)
        if not cell_path:
            self._fallback_frontier_goal(graph, events)
            return
        self._set_goal_path(cell_path, vp.position, vp.yaw, "viewpoint", cid)
        events.append(f"plan:{variant}:{cid}")

    def _fallback_frontier_goal(self, graph: PlanningGraph, events: list[str]) -> None:
        """No viable cluster viewpoint: head for the nearest frontier voxel."""
        cells = self.frontiers.frontier_cells()
        if cells.size == 0:
            return
        dist = graph.distances_from([self._pose_flat()])[0]
        dcells = dist[cells]
        order = np.argsort(dcells, kind="stable")
        best = None
        for k in order:
            if np.isfinite(dcells[k]) and dcells[k] > 1e-9:
                best = int(cells[k])
                break
        if best is None:
            return
        _, cell_path = graph.shortest_path(self._pose_flat(), best)
        if not cell_path:
            return
        center = self.grid.index_to_center(self.grid.unflat(best))
        self.current_tour = []
        self._set_goal_path(cell_path, center, self.pose.yaw, "frontier")
        events.append("plan:frontier_fallback")

    def _plan_navigate(self, t: float, events: list[str]) -> None:
        assert self.latched is not None
        self._last_nav_plan = t
        target = self.latched[0]
        graph = self._ensure_graph()
        state_flat = self.amap.flat_state
        known_occ = (self.amap.state == OCC_OCCUPIED)
        nx, ny, nz = self.grid.dims
        res = self.grid.resolution
        origin = np.asarray(self.grid.origin, dtype=np.float64)
        z_lo = origin[2] + 1.5 * res
        z_hi = origin[2] + (nz - 1.5) * res
        radius = self.scenario.success_radius

        start_flat = self._pose_flat()
        dist = graph.distances_from([start_flat])[0]

        def candidates_on(frac: float) -> list[tuple[float, int, np.ndarray]]:
            out = []
            seen = set()
            for k in range(self.cfg.mission.goal_yaw_samples):
                ang = 2.0 * math.pi * k / self.cfg.mission.goal_yaw_samples
                pos = np.array([target[0] + frac * radius * math.cos(ang),
                                target[1] + frac * radius * math.sin(ang),
                                min(max(target[2], z_lo), z_hi)])
                g = np.floor((pos - origin) / res)
                if np.any(g < 0.0) or np.any(g >= np.array(self.grid.dims)):
                    continue
                cell = (int(g[0]) * ny + int(g[1])) * nz + int(g[2])
                if cell in seen:
                    continue
                seen.add(cell)
                if state_flat[cell] != OCC_FREE or not np.isfinite(dist[cell]):
                    continue
                center = origin + (g + 0.5) * res
                out.append((float(dist[cell]), cell, center))
            return sorted(out, key=lambda c: (c[0], c[1]))

        chosen = None
        for frac in self.cfg.mission.goal_ring_fractions:
            cands = candidates_on(frac)
            if not cands:
                continue
            # prefer candidates with a clear known-space ray to the target
            starts = np.stack([c[2] for c in cands])
            ends = np.tile(target, (len(cands), 1))
            hits = ray_first_hit_batch(known_occ, res, origin, starts, ends)
            clear = hits[:, 0] < 0
            ranked = [c for c, ok in zip(cands, clear) if ok] or cands
            chosen = ranked[0]
            break
        kind = "navigate"
        if chosen is None:
            # ball fallback: nearest-to-target known-free reachable cell
            centers = self.grid.cell_centers()
            d_target = np.linalg.norm(centers - target, axis=1)
            ok = (d_target <= radius * 0.9) & (state_flat == OCC_FREE) & np.isfinite(dist)
            flats = np.nonzero(ok)[0]
            if flats.size:
                best = int(flats[np.argmin(d_target[flats])])
                chosen = (float(dist[best]), best, centers[best])
            else:
                # surroundings still unknown: fly toward the verified position
                # through unknown space and resample once the map fills in
                band = np.zeros(self.grid.dims, dtype=bool)
                band[:, :, 1:nz - 1] = True
                ok = (band.reshape(-1) & (state_flat != OCC_OCCUPIED)
                      & np.isfinite(dist) & (d_target > 0.9))
                flats = np.nonzero(ok)[0]
                if flats.size == 0:
                    events.append("navigate:no_goal")
                    return
                best = int(flats[np.argmin(d_target[flats])])
                if best == start_flat:
                    events.append("navigate:no_goal")
                    return
                chosen = (float(dist[best]), best, centers[best])
                kind = "approach"

        _, cell_path = graph.shortest_path(start_flat, int(chosen[1]))
        if not cell_path:
            events.append("navigate:no_goal")
            return
        goal_pos = chosen[2]
        yaw = math.atan2(target[1] - goal_pos[1], target[0] - goal_pos[0])
        self._set_goal_path(cell_path, goal_pos, yaw, kind)
        events.append(f"plan:{kind}")

    # -- motion ----------------------------------------------------------------------

    def _invalidate_blocked_path(self, events: list[str]) -> None:
        if self.follower.idle:
            return
        pos = np.array([self.pose.x, self.pose.y, self.pose.z])
        state_flat = self.amap.flat_state
        dims = self.grid.dims
        walked = 0.0
        prev = pos
        prev_idx = self.grid.world_to_index(pos)
        for wp in self.follower.waypoints:
            # cut off on the distance to the step's start, not its end: a step
            # that begins inside the lookahead must be validated even when its
            # far waypoint lies just beyond it
            if walked > LOOKAHEAD_M:
                break
            walked += float(np.linalg.norm(wp - prev))
            prev = wp
            idx = self.grid.world_to_index(wp)
            if not all(0 <= idx[a] < dims[a] for a in range(3)):
                continue
            blocked = state_flat[self.grid.flat(idx)] != OCC_FREE
            if not blocked:
                # diagonal steps hug the corner of their guard cells; a guard
                # that became known-occupied after planning would be cut
                # through even though every path cell is still free
                off = tuple(int(idx[a] - prev_idx[a]) for a in range(3))
                for gd in CORNER_GUARDS.get(off, ()):
                    g = (prev_idx[0] + gd[0], prev_idx[1] + gd[1], prev_idx[2] + gd[2])
                    if (all(0 <= g[a] < dims[a] for a in range(3))
                            and state_flat[self.grid.flat(g)] == OCC_OCCUPIED):
                        blocked = True
                        break
            if blocked:
                self.follower.clear()
                self.goal = None
                self._replan_trigger = True
                events.append("path:blocked")
                return
            prev_idx = idx

    def _advance_motion(self, t: float, dt: float, events: list[str]) -> None:
        if self.follower.idle and self.follower.final_yaw is None:
            return
        before = (self.pose.x, self.pose.y, self.pose.z, self.pose.yaw)
        new_pose = self.follower.advance(self.pose, dt)
        delta = math.dist(before[:3], (new_pose.x, new_pose.y, new_pose.z))
        if delta > 1e-12 or abs(wrap_angle(new_pose.yaw - before[3])) > 1e-12:
            self._last_progress = t
        self.path_length += delta
        self.pose = new_pose

    # -- termination --------------------------------------------------------------------

    def _distance_to_target(self) -> float:
        p = np.array([self.pose.x, self.pose.y, self.pose.z])
        return float(np.linalg.norm(p - self.target_position))

    def _finish(self, outcome: str, sub_reason: str = "") -> None:
        d = self._distance_to_target()
        if outcome != OUTCOME_COLLISION and d <= self.scenario.success_radius:
            outcome, sub_reason = OUTCOME_SUCCESS, ""
        if outcome == OUTCOME_MAX_STEPS and sub_reason == SUB_TIMEOUT and self._budget_hit:
            sub_reason = SUB_BUDGET
        self.outcome = outcome
        self.sub_reason = sub_reason
        self.phase = PHASE_DONE

    def _result(self) -> MissionResult:
        return MissionResult(
            outcome=self.outcome or OUTCOME_MAX_STEPS,
            sub_reason=self.sub_reason,
            ft=self.mission_time,
            sim_time=self.exec_time,
            stall_total=self.stall_total,
            ticks=self.tick_index,
            final_pose=self.pose,
            distance_to_target=self._distance_to_target(),
            min_distance_to_target=self.min_distance,
            path_length=self.path_length,
            queries_used=self.ledger.used,
            verified=self.latched is not None,
            latched_object_id=None if self.latched is None else self.latched[1],
            keyframes_admitted=dict(self.gate.admitted),
            keyframes_drained=dict(self.gate.drained),
            clusters_final=len(self.frontiers.clusters),
            plan_timings_ms=list(self.plan_timings_ms),
            trace=self.trace,
        )
