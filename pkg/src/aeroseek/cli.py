"""Command line interface.

Subcommands:
  run       one episode, metrics to stdout and optionally to --out-dir
  batch     every scenario x variant x seed combination in a manifest
  gen       generate a scenario from a template and save it as JSON
  dump-sop  export a tour instance, either from a mission or synthetic
  replay    re-run an exported trace and check it reproduces exactly

Common flags: --config loads a JSON config file, --set section.field=value
applies individual overrides on top, --print-config prints the effective
config with provenance tags and exits.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .bench import (BenchError, replay_trace, results_csv_text, run_batch,
                    run_episode)
from .config import (ORACLE_MODES, VARIANTS, ConfigError, load_config, print_config)
from .mission import MissionRunner
from .tour import build_cost_matrix, build_precedence, dump_sop_instance, solve_sop
from .world import TEMPLATES, ScenarioError, generate_scenario, load_scenario, save_scenario


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="SECTION.FIELD=VALUE", help="config override, repeatable")
    p.add_argument("--print-config", action="store_true",
                   help="print effective config with provenance and exit")


def _episode_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", required=True,
                   help=f"template name {TEMPLATES} or scenario JSON path")
    p.add_argument("--seed", type=int, default=0, help="scenario generation seed")
    p.add_argument("--episode-seed", type=int, default=0)
    p.add_argument("--planner", "--variant", dest="planner", default=None,
                   choices=VARIANTS, help="planner variant")
    p.add_argument("--oracle", default=None, choices=ORACLE_MODES)
    p.add_argument("--latency-mean", type=float, default=None)


def _flag_overrides(args) -> list[str]:
    out = list(args.overrides)
    if getattr(args, "planner", None):
        out.append(f"run.variant={args.planner}")
    if getattr(args, "oracle", None):
        out.append(f"run.oracle_mode={args.oracle}")
    if getattr(args, "latency_mean", None) is not None:
        out.append(f"latency.mean={args.latency_mean}")
    return out


def _load_scenario_arg(spec: str, seed: int):
    if spec.endswith(".json"):
        return load_scenario(spec)
    return generate_scenario(spec, seed)


def _maybe_print_config(args, cfg) -> bool:
    if args.print_config:
        print(print_config(cfg, include_provenance=True))
        return True
    return False


def cmd_run(args) -> int:
    cfg = load_config(args.config, _flag_overrides(args))
    if _maybe_print_config(args, cfg):
        return 0
    scenario = _load_scenario_arg(args.scenario, args.seed)
    out_dir = Path(args.out_dir) if args.out_dir else None
    trace_path = maps_path = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = f"{scenario.name}_{cfg.run.variant}_{args.episode_seed}"
        if args.export_traces:
            trace_path = out_dir / f"trace_{stem}.ndjson"
        if args.export_maps:
            maps_path = out_dir / f"maps_{stem}.npz"
    result = run_episode(scenario, args.episode_seed, cfg.run.variant, cfg,
                         trace_path=trace_path, maps_path=maps_path)
    print(f"{result.scenario} variant={result.variant} episode_seed={result.episode_seed} "
          f"-> {result.outcome} ft={result.ft:.1f}s dtg={result.dtg:.2f}m "
          f"spl={result.spl:.3f} queries={result.queries_used}")
    print(json.dumps(asdict(result), indent=2, sort_keys=True))
    if out_dir is not None:
        (out_dir / "results.csv").write_text(results_csv_text([result]))
    return 0 if not result.error else 1


def cmd_batch(args) -> int:
    cfg = load_config(args.config, _flag_overrides(args))
    if _maybe_print_config(args, cfg):
        return 0
    report = run_batch(args.manifest, out_dir=args.out_dir, base_cfg=cfg,
                       export_traces=args.export_traces)
    print(f"{report.episodes} episodes, {report.errors} errors")
    for variant, agg in report.aggregates.items():
        print(f"  {variant:14s} sr={agg['sr']:.3f} osr={agg['osr']:.3f} "
              f"spl={agg['spl']:.3f} dtg={agg['dtg']:.2f} ft={agg['ft']:.1f}")
    if args.out_dir:
        print(f"wrote {Path(args.out_dir) / 'results.csv'} and summary.json")
    return 0


def cmd_gen(args) -> int:
    scenario = generate_scenario(args.scenario, args.seed)
    save_scenario(scenario, args.out)
    print(f"{scenario.name}: dims={scenario.grid.dims} objects={len(scenario.objects)} "
          f"target={scenario.target.category} -> {args.out}")
    return 0


def cmd_dump_sop(args) -> int:
    if args.scenario:
        cfg = load_config(args.config, _flag_overrides(args) + ["run.variant=sgcp"])
        scenario = _load_scenario_arg(args.scenario, args.seed)
        runner = MissionRunner(scenario, cfg, episode_seed=args.episode_seed)
        runner.run()
        if runner.last_sop_instance is None:
            print("mission never reached a multi-cluster plan; nothing to dump",
                  file=sys.stderr)
            return 1
        matrix, pairs, cluster_ids = runner.last_sop_instance
        meta = {"source": "mission", "scenario": scenario.name,
                "episode_seed": args.episode_seed}
    else:
        rng = np.random.default_rng(args.seed)
        n = args.clusters
        values = rng.random(n)
        pts = rng.random((n + 1, 2)) * 50.0
        yaws = rng.random(n + 1) * 2 * np.pi
        dists = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
        pairs = build_precedence(values, args.rho)
        matrix = build_cost_matrix(dists, yaws, pairs, 2.0, 0.9)
        cluster_ids = list(range(n))
        meta = {"source": "synthetic", "seed": args.seed, "rho": args.rho,
                "values": [round(float(v), 6) for v in values]}
    tour = solve_sop(matrix, pairs)
    meta["solution"] = {"order": list(tour.order), "cost": tour.total_cost,
                        "exact": tour.exact}
    dump_sop_instance(args.out, matrix, pairs, cluster_ids, meta)
    print(f"{len(cluster_ids)} clusters, {len(pairs)} precedence pairs, "
          f"cost {tour.total_cost:.3f} ({'exact' if tour.exact else 'heuristic'}) "
          f"-> {args.out}")
    return 0


def cmd_replay(args) -> int:
    ok, msg = replay_trace(args.trace, scenario_dir=args.scenario_dir)
    print(msg)
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aeroseek", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one episode")
    _common_flags(p)
    _episode_flags(p)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--export-traces", action="store_true")
    p.add_argument("--export-maps", action="store_true")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("batch", help="run a manifest of episodes")
    _common_flags(p)
    p.add_argument("manifest", help="batch manifest JSON")
    p.add_argument("--out-dir", default=None)
    p.add_argument("--oracle", default=None, choices=ORACLE_MODES)
    p.add_argument("--latency-mean", type=float, default=None)
    p.add_argument("--export-traces", action="store_true")
    p.set_defaults(fn=cmd_batch)

    p = sub.add_parser("gen", help="generate a scenario file")
    p.add_argument("--scenario", required=True, choices=TEMPLATES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("dump-sop", help="export a tour instance as JSON")
    _common_flags(p)
    p.add_argument("--scenario", default=None,
                   help="mission source: template name or scenario JSON path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--episode-seed", type=int, default=0)
    p.add_argument("--oracle", default=None, choices=ORACLE_MODES)
    p.add_argument("--latency-mean", type=float, default=None)
    p.add_argument("--clusters", type=int, default=8, help="synthetic instance size")
    p.add_argument("--rho", type=float, default=0.15)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_dump_sop)

    p = sub.add_parser("replay", help="verify an exported trace reproduces")
    p.add_argument("trace")
    p.add_argument("--scenario-dir", default=None)
    p.set_defaults(fn=cmd_replay)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ScenarioError, BenchError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
