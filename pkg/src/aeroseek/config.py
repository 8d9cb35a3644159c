"""Run configuration: sectioned dataclasses with file and CLI overrides.

Precedence is defaults < config file < --set overrides. Unknown sections or
fields are rejected rather than ignored so typos fail loudly. PROVENANCE
tags each tunable as "paper" (value taken from the published system) or
"default" (an implementation choice here).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields

from .frontier import FrontierConfig
from .keyframes import KeyframeConfig
from .oracle import LatencyModel, OracleParams
from .perception import DetectorNoise, SensorConfig
from .tour import TourConfig

VARIANTS = ("sgcp", "two_stage", "scalarization", "value_greedy")
ORACLE_MODES = ("scripted", "perfect", "remote")


class ConfigError(ValueError):
    pass


@dataclass
class KinematicsConfig:
    v_max: float = 2.0
    a_max: float = 1.5
    omega_max: float = 0.9


@dataclass
class ValueMapConfig:
    prior: float = 0.5
    d_max: float = 30.0


@dataclass
class MissionConfig:
    planner_tick: float = 0.1
    max_sim_time: float = 600.0
    arrive_tolerance: float = 0.6
    replan_min_interval: float = 0.0
    viewpoint_cooldown: float = 8.0
    stall_timeout: float = 45.0
    goal_ring_fractions: tuple[float, ...] = (0.4, 0.6, 0.8)
    goal_yaw_samples: int = 16
    blocking_oracle: bool = False
    # candidates the oracle rejected are not re-verified for this long
    reverify_holdoff: float = 30.0
    # stop spending budget on keyframe scoring once this many queries remain,
    # so long missions always keep verification capacity
    verify_reserve: int = 5


@dataclass
class RunSettings:
    variant: str = "sgcp"
    oracle_mode: str = "scripted"
    oracle_endpoint: str = ""


@dataclass
class RunConfig:
    run: RunSettings = field(default_factory=RunSettings)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    detector: DetectorNoise = field(default_factory=DetectorNoise.benchmark)
    keyframes: KeyframeConfig = field(default_factory=KeyframeConfig)
    valuemap: ValueMapConfig = field(default_factory=ValueMapConfig)
    frontier: FrontierConfig = field(default_factory=FrontierConfig)
    tour: TourConfig = field(default_factory=TourConfig)
    oracle: OracleParams = field(default_factory=OracleParams)
    latency: LatencyModel = field(default_factory=LatencyModel)
    kinematics: KinematicsConfig = field(default_factory=KinematicsConfig)
    mission: MissionConfig = field(default_factory=MissionConfig)


# "paper": published system value; "default": implementation choice here.
PROVENANCE = {
    "run.variant": "default",
    "run.oracle_mode": "default",
    "run.oracle_endpoint": "default",
    "sensor.fov_h": "paper",
    "sensor.fov_v": "paper",
    "sensor.camera_yaws": "paper",
    "sensor.lidar_range": "paper",
    "sensor.detect_range": "default",
    "detector.miss_prob": "default",
    "detector.mislabel_prob": "default",
    "detector.hallucination_rate": "default",
    "detector.confidence_jitter": "default",
    "keyframes.tau_cov": "paper",
    "keyframes.coverage_capacity": "paper",
    "keyframes.task_capacity": "paper",
    "keyframes.max_keyframes": "default",
    "valuemap.prior": "paper",
    "valuemap.d_max": "paper",
    "frontier.tau_s": "paper",
    "frontier.max_extent": "paper",
    "frontier.min_cluster_size": "default",
    "frontier.viewpoint_radii": "paper",
    "frontier.yaw_samples": "paper",
    "frontier.inflation": "default",
    "tour.rho": "paper",
    "tour.exact_threshold": "paper",
    "tour.unknown_penalty": "default",
    "tour.scalarization_cost_floor": "default",
    "tour.two_stage_threshold": "default",
    "oracle.base_match": "paper",
    "oracle.base_adjacent": "paper",
    "oracle.base_other": "paper",
    "oracle.score_sigma": "paper",
    "oracle.true_accept": "default",
    "oracle.false_accept": "default",
    "latency.mean": "paper",
    "latency.jitter": "default",
    "latency.tail_prob": "default",
    "latency.tail_latency": "default",
    "kinematics.v_max": "paper",
    "kinematics.a_max": "paper",
    "kinematics.omega_max": "paper",
    "mission.planner_tick": "paper",
    "mission.max_sim_time": "default",
    "mission.arrive_tolerance": "default",
    "mission.replan_min_interval": "default",
    "mission.viewpoint_cooldown": "default",
    "mission.stall_timeout": "default",
    "mission.goal_ring_fractions": "default",
    "mission.goal_yaw_samples": "default",
    "mission.blocking_oracle": "default",
    "mission.reverify_holdoff": "default",
    "mission.verify_reserve": "default",
}


def _section_to_dict(obj) -> dict:
    out = {}
    for f in fields(obj):
        v = getattr(obj, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def config_to_dict(cfg: RunConfig) -> dict:
    return {f.name: _section_to_dict(getattr(cfg, f.name)) for f in fields(cfg)}


def _coerce(section_name: str, current, value):
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{section_name} expects a boolean, got {value!r}")
        return value
    if isinstance(current, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{section_name} expects a list, got {value!r}")
        return tuple(type(current[0])(v) for v in value) if current else tuple(value)
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{section_name} expects a number, got {value!r}")
        return float(value)
    if isinstance(current, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{section_name} expects an integer, got {value!r}")
        return int(value)
    if isinstance(current, str):
        if not isinstance(value, str):
            raise ConfigError(f"{section_name} expects a string, got {value!r}")
        return value
    raise ConfigError(f"{section_name}: unsupported field type {type(current).__name__}")


def merge_dict(cfg: RunConfig, doc: dict) -> RunConfig:
    section_names = {f.name for f in fields(cfg)}
    for section_name, body in doc.items():
        if section_name not in section_names:
            raise ConfigError(f"unknown config section {section_name!r}")
        if not isinstance(body, dict):
            raise ConfigError(f"section {section_name!r} must be a mapping")
        section = getattr(cfg, section_name)
        field_names = {f.name for f in fields(section)}
        for key, value in body.items():
            if key not in field_names:
                raise ConfigError(f"unknown field {section_name}.{key}")
            setattr(section, key,
                    _coerce(f"{section_name}.{key}", getattr(section, key), value))
    return cfg


def apply_overrides(cfg: RunConfig, overrides) -> RunConfig:
    """Apply "section.field=value" strings; values parse as JSON, else string."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.field=value")
        dotted, raw = item.split("=", 1)
        if "." not in dotted:
            raise ConfigError(f"override key {dotted!r} must look like section.field")
        section_name, key = dotted.split(".", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        merge_dict(cfg, {section_name: {key: value}})
    return cfg


def validate_config(cfg: RunConfig) -> RunConfig:
    if cfg.run.variant not in VARIANTS:
        raise ConfigError(f"run.variant must be one of {VARIANTS}, got {cfg.run.variant!r}")
    if cfg.run.oracle_mode not in ORACLE_MODES:
        raise ConfigError(f"run.oracle_mode must be one of {ORACLE_MODES}")
    if cfg.run.oracle_mode == "remote" and not cfg.run.oracle_endpoint:
        raise ConfigError("run.oracle_mode=remote requires run.oracle_endpoint")
    positive = [
        ("kinematics.v_max", cfg.kinematics.v_max),
        ("kinematics.a_max", cfg.kinematics.a_max),
        ("kinematics.omega_max", cfg.kinematics.omega_max),
        ("mission.planner_tick", cfg.mission.planner_tick),
        ("mission.max_sim_time", cfg.mission.max_sim_time),
        ("tour.rho", cfg.tour.rho),
        ("frontier.tau_s", cfg.frontier.tau_s),
        ("keyframes.tau_cov", cfg.keyframes.tau_cov),
        ("valuemap.d_max", cfg.valuemap.d_max),
    ]
    for name, value in positive:
        if value <= 0:
            raise ConfigError(f"{name} must be positive, got {value}")
    return cfg


def load_config(path=None, overrides=()) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        with open(path) as fh:
            doc = json.load(fh)
        merge_dict(cfg, doc)
    apply_overrides(cfg, overrides or ())
    return validate_config(cfg)


def print_config(cfg: RunConfig, include_provenance: bool = False) -> str:
    doc = config_to_dict(cfg)
    if include_provenance:
        doc = {sec: {k: {"value": v, "source": PROVENANCE[f"{sec}.{k}"]}
                     for k, v in body.items()}
               for sec, body in doc.items()}
    return json.dumps(doc, indent=1, sort_keys=True)


def copy_config(cfg: RunConfig) -> RunConfig:
    out = RunConfig()
    merge_dict(out, config_to_dict(cfg))
    return out


def _check_provenance_complete():
    cfg = RunConfig()
    keys = {f"{sec.name}.{f.name}" for sec in fields(cfg)
            for f in fields(getattr(cfg, sec.name))}
    missing = keys ^ set(PROVENANCE)
    if missing:  # pragma: no cover - import-time guard
        raise AssertionError(f"provenance map out of sync: {sorted(missing)}")


_check_provenance_complete()
