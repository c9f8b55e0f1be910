"""Scenario configuration loaded from a TOML file."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .backup import ArbitrationConfig, PidConfig, PurePursuitConfig
from .mpc import MpcConfig, MpcWeights
from .qp import QpSolverConfig
from .tires import PRACTICE_FRONT, PRACTICE_REAR, PacejkaAxleParams, VehicleParams, params_from_dict

OUTPUT_ENV = "LPVMPC_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    raceline: Path
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    front: PacejkaAxleParams = PRACTICE_FRONT
    rear: PacejkaAxleParams = PRACTICE_REAR
    weights: MpcWeights = field(default_factory=MpcWeights)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    pure_pursuit: PurePursuitConfig = field(default_factory=PurePursuitConfig)
    pid: PidConfig = field(default_factory=PidConfig)
    arbitration: ArbitrationConfig = field(default_factory=ArbitrationConfig)
    duration: float = 60.0
    plant_dt: float = 0.001
    launch_speed: float = 25.0
    launch_offset: float = 0.0
    metrics_skip: float = 10.0
    rear_slip_gain: float = 0.0
    v_ref_ramp: tuple | None = None
    timing: str = "wall"
    seed: int = 0
    measurement_noise: float = 0.0
    output_dir: Path = Path("out")
    name: str = "scenario"

    def __post_init__(self):
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        if self.timing not in ("wall", "none"):
            raise ConfigError("timing must be 'wall' or 'none'")
        if not 0 < self.plant_dt <= 0.02:
            raise ConfigError("plant_dt must lie in (0, 0.02]")
        period = self.mpc.control_period
        ratio = period / self.plant_dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError("control_period must be a multiple of plant_dt")


def _pick(cls, data: dict, section: str):
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"[{section}] unknown keys: {sorted(unknown)}")
    return data


def scenario_from_dict(data: dict, base_dir: Path | str = ".") -> ScenarioConfig:
    base_dir = Path(base_dir)
    data = dict(data)
    sc = dict(data.pop("scenario", {}))
    if "raceline" not in sc:
        raise ConfigError("[scenario] raceline is required")
    raceline = (base_dir / sc.pop("raceline")).resolve()
    if not raceline.exists():
        raise ConfigError(f"raceline file not found: {raceline}")
    params = {}
    if "params" in sc:
        p = (base_dir / sc.pop("params")).resolve()
        if not p.exists():
            raise ConfigError(f"parameter file not found: {p}")
        with open(p, "rb") as fh:
            params = tomllib.load(fh)
    for key in ("vehicle", "tire"):
        if key in data:
            params.setdefault(key, {}).update(data.pop(key))
    try:
        vehicle, front, rear = params_from_dict(params)
        mpc_sec = dict(data.pop("mpc", {}))
        w = {k: mpc_sec.pop(k) for k in ("q", "r", "q_beta") if k in mpc_sec}
        if "q" in w:
            w["q"] = tuple(float(v) for v in w["q"])
        weights = MpcWeights(**w)
        qp_sec = data.pop("qp", {})
        qp_cfg = QpSolverConfig(**_pick(QpSolverConfig, qp_sec, "qp"))
        mpc_sec.setdefault("delta_max", vehicle.delta_max)
        mpc_sec.setdefault("rate_max", vehicle.delta_rate_max)
        mpc_cfg = MpcConfig(**_pick(MpcConfig, mpc_sec, "mpc"), qp=qp_cfg)
        pp = PurePursuitConfig(**_pick(PurePursuitConfig, data.pop("pure_pursuit", {}), "pure_pursuit"))
        pid = PidConfig(**_pick(PidConfig, data.pop("pid", {}), "pid"))
        arb = ArbitrationConfig(**_pick(ArbitrationConfig, data.pop("arbitration", {}), "arbitration"))
        plant = dict(data.pop("plant", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if data:
        raise ConfigError(f"unknown sections: {sorted(data)}")
    out = sc.pop("output_dir", os.environ.get(OUTPUT_ENV, "out"))
    kwargs = dict(
        raceline=raceline, vehicle=vehicle, front=front, rear=rear, weights=weights,
        mpc=mpc_cfg, pure_pursuit=pp, pid=pid, arbitration=arb,
        output_dir=(base_dir / out).resolve(),
    )
    plant_keys = {"dt": "plant_dt", "rear_slip_gain": "rear_slip_gain",
                  "measurement_noise": "measurement_noise"}
    for k, v in plant.items():
        if k not in plant_keys:
            raise ConfigError(f"[plant] unknown key {k!r}")
        kwargs[plant_keys[k]] = v
    allowed = {"duration", "launch_speed", "launch_offset", "metrics_skip", "v_ref_ramp",
               "timing", "seed", "name"}
    for k, v in sc.items():
        if k not in allowed:
            raise ConfigError(f"[scenario] unknown key {k!r}")
        kwargs[k] = tuple(v) if k == "v_ref_ramp" else v
    try:
        return ScenarioConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg = scenario_from_dict(data, path.parent)
    if cfg.name == "scenario":
        cfg.name = path.stem
    return cfg
