"""Experiment configuration: one YAML file with scene/solver/mpc/loss/run/calibration sections."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .mpc import MpcParams
from .objectives import LossParams
from .peeler import RunLimits
from .scene import SceneConfig, SceneConfigError, to_meters
from .sim import SolverParams


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"invalid config field `{field_name}`: {message}")
        self.field = field_name


@dataclass(frozen=True)
class CalibrationParams:
    stiffness_grid: tuple[float, ...] = (20.0, 50.0, 100.0, 200.0)
    eps_grid: tuple[float, ...] = (1e-4, 2.5e-4, 5e-4, 1e-3)
    # straight-pull peak displacement scale of a real phantom: 43.5 +/- 9.9 mm
    lift_min: float = 0.0336
    lift_max: float = 0.0534
    target_lift: float = 0.0435
    probe_steps: int = 200


@dataclass(frozen=True)
class ExperimentConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    solver: SolverParams = field(default_factory=SolverParams)
    mpc: MpcParams = field(default_factory=MpcParams)
    loss: LossParams = field(default_factory=LossParams)
    run: RunLimits = field(default_factory=RunLimits)
    calibration: CalibrationParams = field(default_factory=CalibrationParams)

    def resolved(self) -> dict:
        """Plain dict of every resolved value (SI units), suitable for echoing."""
        out = {"scene": self.scene.to_dict()}
        for name in ("solver", "mpc", "loss", "run", "calibration"):
            d = dataclasses.asdict(getattr(self, name))
            out[name] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}
        return out

    def scene_hash(self) -> str:
        blob = json.dumps(self.resolved()["scene"], sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, mpc=dataclasses.replace(self.mpc, rng_seed=int(seed)))


_LENGTH_FIELDS = {
    "mpc": {"step_size"},
    "calibration": {"lift_min", "lift_max", "target_lift"},
}


def _section(cls, name: str, data: Any):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(name, "expected a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    kw = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"{name}.{key}", "unknown field")
        default = known[key].default
        try:
            if value is None:
                kw[key] = None
            elif key == "initial_direction":
                kw[key] = tuple(float(v) for v in value)
            elif key in _LENGTH_FIELDS.get(name, ()):
                kw[key] = to_meters(value, key)
            elif isinstance(default, tuple):
                kw[key] = tuple(float(v) for v in value)
            elif isinstance(default, bool):
                kw[key] = bool(value)
            elif isinstance(default, int):
                kw[key] = int(value)
            else:
                kw[key] = float(value)
        except (TypeError, ValueError, SceneConfigError) as exc:
            raise ConfigError(f"{name}.{key}", f"bad value {value!r} ({exc})") from None
    try:
        return cls(**kw)
    except ValueError as exc:
        raise ConfigError(name, str(exc)) from None


def config_from_dict(data: dict | None) -> ExperimentConfig:
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("<root>", "expected a mapping of sections")
    unknown = set(data) - {"scene", "solver", "mpc", "loss", "run", "calibration"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown section")
    try:
        scene = SceneConfig.from_dict(data.get("scene") or {})
    except SceneConfigError as exc:
        raise ConfigError(exc.field, str(exc)) from None
    loss_data = dict(data.get("loss") or {})
    if "sigma" in loss_data:
        # echoed configs carry it; it must agree with the scene margin
        try:
            sigma = to_meters(loss_data.pop("sigma"), "sigma")
        except SceneConfigError as exc:
            raise ConfigError("loss.sigma", str(exc)) from None
        if abs(sigma - scene.sdf_margin_sigma) > 1e-15:
            raise ConfigError("loss.sigma", "set the SDF margin via scene.sdf_margin_sigma")
    loss = _section(LossParams, "loss", loss_data)
    loss = dataclasses.replace(loss, sigma=scene.sdf_margin_sigma)
    return ExperimentConfig(
        scene=scene,
        solver=_section(SolverParams, "solver", data.get("solver")),
        mpc=_section(MpcParams, "mpc", data.get("mpc")),
        loss=loss,
        run=_section(RunLimits, "run", data.get("run")),
        calibration=_section(CalibrationParams, "calibration", data.get("calibration")),
    )


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("--config", f"not valid YAML: {exc}") from None
    return config_from_dict(data)


def dump_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config.resolved(), sort_keys=True)
