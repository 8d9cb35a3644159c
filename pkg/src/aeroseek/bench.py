"""Episode benchmark harness: single runs, manifest batches, CSV/JSON reports.

results.csv columns (fixed, one row per episode):
  scenario       scenario name (template-seed or file stem)
  seed           scenario generation seed (-1 for file-loaded scenarios)
  episode_seed   per-episode seed; varies detector/oracle/latency draws
  variant        planner variant
  outcome        success | collision | max_steps | wrong_object | error
  sub_reason     failure detail (timeout/exhausted/budget), empty otherwise
  success        0/1, outcome == success
  oracle_success 0/1, agent came within success_radius at any point
  path_length    meters flown
  optimal_length shortest-path meters on the fully known map (see below)
  spl            success * optimal / max(optimal, actual)
  dtg            final Euclidean distance to the true target, meters
  ft             mission time at termination, seconds (includes oracle stalls)
  queries_used   oracle queries charged against the budget
  error          exception text for rows that failed to run, else empty

optimal_length is the geodesic from the start cell to the nearest valid goal
viewpoint (free cell within success_radius of the target with a clear ray to
it) computed on the ground-truth map with no unknown-space penalty. Straight
line distance would make SPL unattainable in obstructed worlds.

Batch aggregates report mean FT/DTG over all episodes, ft_charged (failed
episodes charged the full mission-time cap, so failing fast is not rewarded),
and success-only means for reference.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig, ConfigError, apply_overrides, config_to_dict, \
    copy_config, load_config, merge_dict, validate_config
from .mission import OUTCOME_SUCCESS, MissionResult, MissionRunner
from .perception import OCC_FREE, OCC_OCCUPIED
from .tour import PlanningGraph
from .world import Scenario, generate_scenario, load_scenario, ray_first_hit_batch

RESULTS_COLUMNS = [
    "scenario", "seed", "episode_seed", "variant", "outcome", "sub_reason",
    "success", "oracle_success", "path_length", "optimal_length", "spl",
    "dtg", "ft", "queries_used", "error",
]

SCALE_NOTE = ("Desk-scale worlds: absolute metrics are not comparable to "
              "large-scale published numbers; compare variants within this "
              "run only.")


class BenchError(ValueError):
    pass


@dataclass
class EpisodeResult:
    scenario: str
    seed: int
    episode_seed: int
    variant: str
    outcome: str
    sub_reason: str
    success: bool
    oracle_success: bool
    path_length: float
    optimal_length: float
    spl: float
    dtg: float
    ft: float
    queries_used: int
    error: str = ""

    def to_row(self) -> dict:
        row = asdict(self)
        row["success"] = int(self.success)
        row["oracle_success"] = int(self.oracle_success)
        for k in ("path_length", "optimal_length", "spl", "dtg", "ft"):
            v = row[k]
            row[k] = "nan" if not math.isfinite(v) else f"{v:.6f}"
        return row


@dataclass
class BatchReport:
    episodes: int
    results: list[EpisodeResult]
    aggregates: dict
    failure_breakdown: dict
    errors: int
    config: dict = field(default_factory=dict)


def compute_spl(success: bool, optimal: float, actual: float) -> float:
    """Success weighted by the ratio of shortest to flown path length."""
    if not optimal > 0.0:
        raise BenchError(f"optimal path length must be positive, got {optimal}")
    if actual < 0.0:
        raise BenchError(f"actual path length must be >= 0, got {actual}")
    if not success:
        return 0.0
    return optimal / max(optimal, actual)


def goal_viewpoint_cells(scenario: Scenario) -> np.ndarray:
    """Flat indices of free cells within success_radius with a clear ray to the target.

    A ray that first hits the target's own footprint counts as clear. The
    vertical band excludes the ground and ceiling layers, matching where the
    agent is allowed to fly.
    """
    grid = scenario.grid
    target = scenario.target
    centers = grid.cell_centers()
    d = np.linalg.norm(centers - target.position, axis=1)
    nz = grid.dims[2]
    zs = np.tile(np.arange(nz), grid.dims[0] * grid.dims[1])
    cand = np.flatnonzero((d <= scenario.success_radius) & ~grid.solid.ravel()
                          & (zs >= 1) & (zs < nz - 1))
    if cand.size == 0:
        return cand
    starts = centers[cand]
    ends = np.broadcast_to(target.position, starts.shape)
    hits = ray_first_hit_batch(grid.solid, grid.resolution, grid.origin, starts, ends)
    footprint = {tuple(map(int, f)) for f in target.footprint}
    clear = np.array([h[0] < 0 or tuple(map(int, h)) in footprint for h in hits])
    return cand[clear]


def optimal_path_length(scenario: Scenario) -> float:
    """Geodesic meters from the start cell to the nearest valid goal viewpoint.

    Computed on the fully known ground-truth map. Raises BenchError when the
    scenario is degenerate: start inside an obstacle, no valid viewpoint, no
    route, or start already inside the goal region.
    """
    grid = scenario.grid
    state = np.where(grid.solid, OCC_OCCUPIED, OCC_FREE).astype(np.uint8)
    start_cell = grid.world_to_index(scenario.start_pose.position)
    if grid.solid[start_cell]:
        raise BenchError(f"{scenario.name}: start pose is inside an obstacle")
    goals = goal_viewpoint_cells(scenario)
    if goals.size == 0:
        raise BenchError(f"{scenario.name}: no valid goal viewpoint near target")
    graph = PlanningGraph.build(state, grid.resolution)
    dists = graph.distances_from([grid.flat(start_cell)])[0]
    best = float(np.min(dists[goals]))
    if not math.isfinite(best):
        raise BenchError(f"{scenario.name}: target region unreachable from start")
    if best <= 0.0:
        raise BenchError(f"{scenario.name}: start already inside the goal region")
    return best


def _write_ndjson(path: Path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _trace_header(scenario: Scenario, episode_seed: int, variant: str,
                  cfg: RunConfig) -> dict:
    return {
        "record": "header",
        "scenario": scenario.name,
        "template": scenario.template,
        "seed": scenario.seed,
        "episode_seed": episode_seed,
        "variant": variant,
        "config": config_to_dict(cfg),
    }


def run_episode(scenario: Scenario, episode_seed: int, variant: str,
                cfg: RunConfig, optimal: float | None = None,
                trace_path=None, maps_path=None) -> EpisodeResult:
    """Run one mission and score it. Deterministic per (scenario, seed, variant)."""
    cfg = copy_config(cfg)
    cfg.run.variant = variant
    validate_config(cfg)
    if optimal is None:
        optimal = optimal_path_length(scenario)

    runner = MissionRunner(scenario, cfg, episode_seed=episode_seed)
    res: MissionResult = runner.run()

    success = res.outcome == OUTCOME_SUCCESS
    result = EpisodeResult(
        scenario=scenario.name,
        seed=-1 if scenario.seed is None else int(scenario.seed),
        episode_seed=int(episode_seed),
        variant=variant,
        outcome=res.outcome,
        sub_reason=res.sub_reason or "",
        success=success,
        oracle_success=res.min_distance_to_target <= scenario.success_radius,
        path_length=res.path_length,
        optimal_length=optimal,
        spl=compute_spl(success, optimal, res.path_length),
        dtg=res.distance_to_target,
        ft=res.ft,
        queries_used=res.queries_used,
    )
    if trace_path is not None:
        records = [_trace_header(scenario, episode_seed, variant, cfg)]
        records.extend({"record": "tick", **t} for t in res.trace)
        final = asdict(result)
        final["record"] = "outcome"
        records.append(final)
        _write_ndjson(Path(trace_path), records)
    if maps_path is not None:
        np.savez_compressed(
            Path(maps_path), value=runner.vmap.sem, confidence=runner.vmap.conf,
            occupancy=runner.amap.state)
    return result


def _error_result(scenario_name: str, seed: int, episode_seed: int, variant: str,
                  exc: Exception) -> EpisodeResult:
    nan = float("nan")
    return EpisodeResult(
        scenario=scenario_name, seed=seed, episode_seed=episode_seed,
        variant=variant, outcome="error", sub_reason="", success=False,
        oracle_success=False, path_length=nan, optimal_length=nan, spl=nan,
        dtg=nan, ft=nan, queries_used=0,
        error=f"{type(exc).__name__}: {exc}",
    )


def load_manifest(path) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    for key in ("scenarios", "variants", "episode_seeds"):
        if key not in doc or not doc[key]:
            raise BenchError(f"manifest missing non-empty '{key}'")
    return doc


def _manifest_scenarios(doc: dict, manifest_dir: Path):
    out = []
    for i, entry in enumerate(doc["scenarios"]):
        if "path" in entry:
            p = Path(entry["path"])
            if not p.is_absolute():
                p = manifest_dir / p
            sc = load_scenario(p)
        elif "template" in entry:
            sc = generate_scenario(entry["template"], int(entry.get("seed", 0)))
        else:
            raise BenchError(f"scenarios[{i}]: need 'template' or 'path'")
        out.append(sc)
    return out


def _aggregate(results: list[EpisodeResult], ft_cap: float) -> tuple[dict, dict]:
    per_variant: dict[str, dict] = {}
    breakdown: dict[str, dict] = {}
    for variant in sorted({r.variant for r in results}):
        rows = [r for r in results if r.variant == variant]
        ok = [r for r in rows if not r.error]
        succ = [r for r in ok if r.success]
        def mean(vals):
            return float(np.mean(vals)) if vals else float("nan")
        per_variant[variant] = {
            "episodes": len(rows),
            "errors": len(rows) - len(ok),
            "sr": mean([1.0 * r.success for r in ok]),
            "osr": mean([1.0 * r.oracle_success for r in ok]),
            "spl": mean([r.spl for r in ok]),
            "dtg": mean([r.dtg for r in ok]),
            "ft": mean([r.ft for r in ok]),
            # failed episodes charged the full mission cap, so failing fast
            # is not rewarded when comparing search speed across variants
            "ft_charged": mean([r.ft if r.success else ft_cap for r in ok]),
            "dtg_success": mean([r.dtg for r in succ]),
            "ft_success": mean([r.ft for r in succ]),
            "queries": mean([float(r.queries_used) for r in ok]),
        }
        hist: dict[str, int] = {}
        for r in rows:
            hist[r.outcome] = hist.get(r.outcome, 0) + 1
        breakdown[variant] = dict(sorted(hist.items()))
    return per_variant, breakdown


def results_csv_text(results: list[EpisodeResult]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=RESULTS_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in sorted(results, key=lambda r: (r.scenario, r.variant, r.episode_seed)):
        writer.writerow(r.to_row())
    return buf.getvalue()


def run_batch(manifest_path, out_dir=None, base_cfg: RunConfig | None = None,
              export_traces: bool = False, overrides=()) -> BatchReport:
    """Run every scenario x variant x episode-seed combination in a manifest.

    Episode failures are recorded per row and the batch continues. Writes
    results.csv and summary.json (with the effective config embedded) when
    out_dir is given.
    """
    manifest_path = Path(manifest_path)
    doc = load_manifest(manifest_path)
    cfg = base_cfg if base_cfg is not None else load_config()
    cfg = copy_config(cfg)
    if "config" in doc:
        cfg = merge_dict(cfg, doc["config"])
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    validate_config(cfg)

    scenarios = _manifest_scenarios(doc, manifest_path.parent)
    variants = [str(v) for v in doc["variants"]]
    episode_seeds = [int(s) for s in doc["episode_seeds"]]

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    results: list[EpisodeResult] = []
    optimal_cache: dict[str, float | Exception] = {}
    for sc in scenarios:
        if sc.name not in optimal_cache:
            try:
                optimal_cache[sc.name] = optimal_path_length(sc)
            except Exception as exc:  # noqa: BLE001 - recorded per row
                optimal_cache[sc.name] = exc
        opt = optimal_cache[sc.name]
        seed = -1 if sc.seed is None else int(sc.seed)
        for variant in variants:
            for eseed in episode_seeds:
                if isinstance(opt, Exception):
                    results.append(_error_result(sc.name, seed, eseed, variant, opt))
                    continue
                trace_path = None
                if export_traces and out is not None:
                    trace_path = out / f"trace_{sc.name}_{variant}_{eseed}.ndjson"
                try:
                    results.append(run_episode(sc, eseed, variant, cfg, optimal=opt,
                                               trace_path=trace_path))
                except Exception as exc:  # noqa: BLE001 - recorded per row
                    results.append(_error_result(sc.name, seed, eseed, variant, exc))

    per_variant, breakdown = _aggregate(results, cfg.mission.max_sim_time)
    errors = sum(1 for r in results if r.error)
    report = BatchReport(
        episodes=len(results), results=results, aggregates=per_variant,
        failure_breakdown=breakdown, errors=errors, config=config_to_dict(cfg),
    )
    if out is not None:
        (out / "results.csv").write_text(results_csv_text(results))
        (out / "summary.json").write_text(summary_json_text(report))
    return report


def summary_json_text(report: BatchReport) -> str:
    doc = {
        "note": SCALE_NOTE,
        "episodes": report.episodes,
        "errors": report.errors,
        "aggregates": report.aggregates,
        "failure_breakdown": report.failure_breakdown,
        "config": report.config,
    }
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n"


# -- trace replay ---------------------------------------------------------------


def read_trace(path) -> tuple[dict, list[dict], dict]:
    header = None
    ticks = []
    outcome = None
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            kind = rec.get("record")
            if kind == "header":
                header = rec
            elif kind == "tick":
                ticks.append(rec)
            elif kind == "outcome":
                outcome = rec
    if header is None or outcome is None:
        raise BenchError(f"{path}: not a complete episode trace")
    return header, ticks, outcome


def replay_trace(path, scenario_dir=None) -> tuple[bool, str]:
    """Re-run the episode recorded in a trace and compare tick-for-tick.

    Returns (ok, message). The scenario is regenerated from template+seed
    when available, otherwise loaded from scenario_dir/<name>.json.
    """
    header, ticks, outcome = read_trace(path)
    if header.get("template"):
        scenario = generate_scenario(header["template"], int(header["seed"]))
    else:
        if scenario_dir is None:
            raise BenchError("trace has no template; pass the scenario directory")
        scenario = load_scenario(Path(scenario_dir) / f"{header['scenario']}.json")

    cfg = validate_config(merge_dict(load_config(), header["config"]))
    runner_trace_path = Path(str(path) + ".replay")
    run_episode(scenario, int(header["episode_seed"]), header["variant"], cfg,
                trace_path=runner_trace_path)
    _, new_ticks, new_outcome = read_trace(runner_trace_path)
    runner_trace_path.unlink()

    if len(new_ticks) != len(ticks):
        return False, f"tick count differs: {len(ticks)} recorded, {len(new_ticks)} replayed"
    for i, (a, b) in enumerate(zip(ticks, new_ticks)):
        if a != b:
            return False, f"tick {i} differs"
    if new_outcome != outcome:
        return False, "outcome record differs"
    return True, f"replay identical over {len(ticks)} ticks ({new_outcome['outcome']})"
