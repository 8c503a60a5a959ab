"""Run configuration: one TOML file, overridden field by field from the command line.

Example::

    seed = 7
    filter = "rls"
    gps_sigma_m = 5.0

    [geometry]
    wheel_radius = 0.165
    track_width = 0.555

    [rls]
    lambda = 0.98

    [sim]
    shape = "circle"
    path_length = 250.0
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .bias import BiasKfConfig
from .rate_kf import RateNoiseParams
from .rls import RlsConfig
from .sim import GyroNoiseSpec, TrajectorySpec
from .types import GpsFix, VehicleGeometry

FILTERS = ("kf", "rls", "raw")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"config error in '{field_name}': {message}")
        self.field = field_name


@dataclass(frozen=True)
class SolverConfig:
    max_iter: int = 50
    tol: float = 1e-9
    prior_sigma: float = 1e3


@dataclass(frozen=True)
class RunConfig:
    geometry: VehicleGeometry = field(default_factory=VehicleGeometry)
    noise: RateNoiseParams = field(default_factory=RateNoiseParams)
    rls: RlsConfig = field(default_factory=RlsConfig)
    bias: BiasKfConfig = field(default_factory=BiasKfConfig)
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    gyro_noise: GyroNoiseSpec = field(default_factory=GyroNoiseSpec)
    solver: SolverConfig = field(default_factory=SolverConfig)
    filter_choice: str = "kf"
    gps_sigma_m: float = 5.0
    odo_sigma_fraction: float = 0.10
    odo_sigma_floor: float = 1e-4
    yaw0: float = 0.0
    seed: int = 0
    calibration_window: tuple[float, float] | None = None

    def __post_init__(self):
        if self.filter_choice not in FILTERS:
            raise ConfigError("filter", f"must be one of {FILTERS}, got {self.filter_choice!r}")
        if not self.gps_sigma_m > 0:
            raise ConfigError("gps_sigma_m", "must be positive")
        if not self.odo_sigma_fraction > 0:
            raise ConfigError("odo_sigma_fraction", "must be positive")


def _build(section: str, cls, values: dict, rename: dict | None = None, **extra):
    rename = rename or {}
    names = {f.name for f in fields(cls)}
    kwargs = {}
    for key, val in values.items():
        name = rename.get(key, key)
        if name not in names:
            raise ConfigError(f"{section}.{key}", "unknown key")
        kwargs[name] = tuple(val) if isinstance(val, list) else val
    kwargs.update(extra)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        msg = str(exc)
        keys = list(values) + list(extra)
        bad = next((k for k in keys if k in msg or rename.get(k, k) in msg), None)
        raise ConfigError(f"{section}.{bad}" if bad else section, msg) from None


def from_dict(data: dict) -> RunConfig:
    data = dict(data)
    geom = _build("geometry", VehicleGeometry, data.pop("geometry", {}))
    noise = _build("rate_kf", RateNoiseParams, data.pop("rate_kf", {}))
    rls = _build("rls", RlsConfig, data.pop("rls", {}), rename={"lambda": "lam"})
    bias_d = dict(data.pop("bias", {}))
    window = bias_d.pop("window", None)
    for key in ("sigma0", "q_bias", "noise_cov"):
        if key in bias_d and np.ndim(bias_d[key]) == 0:
            bias_d[key] = float(bias_d[key]) * np.eye(3)
        elif key in bias_d:
            bias_d[key] = np.asarray(bias_d[key], dtype=float)
    bias = _build("bias", BiasKfConfig, bias_d)
    sim_d = dict(data.pop("sim", {}))
    seed = int(data.get("seed", 0))
    gyro_keys = {"bias0", "arw_sigma", "rrw_sigma"}
    gyro_noise = _build("sim", GyroNoiseSpec, {k: sim_d.pop(k) for k in list(sim_d) if k in gyro_keys}, seed=seed)
    lat = sim_d.pop("origin_lat", 22.3194)
    lon = sim_d.pop("origin_lon", 87.3091)
    try:
        origin = GpsFix(0.0, float(lat), float(lon))
    except ValueError as exc:
        raise ConfigError("sim.origin_lat", str(exc)) from None
    yaw0 = float(data.pop("yaw0", 0.0))
    gps_sigma = float(data.get("gps_sigma_m", 5.0))
    traj = _build("sim", TrajectorySpec, sim_d, geom=geom, origin=origin, yaw0=yaw0, gps_sigma_m=gps_sigma)
    solver = _build("solver", SolverConfig, data.pop("solver", {}))
    top = {}
    for key, val in data.items():
        if key == "filter":
            top["filter_choice"] = val
        elif key in ("gps_sigma_m", "odo_sigma_fraction", "odo_sigma_floor", "seed"):
            top[key] = val
        else:
            raise ConfigError(key, "unknown key")
    if window is not None:
        if len(window) != 2 or not window[1] > window[0]:
            raise ConfigError("bias.window", "must be [start, end] with end > start")
        top["calibration_window"] = (float(window[0]), float(window[1]))
    return RunConfig(geometry=geom, noise=noise, rls=rls, bias=bias, trajectory=traj,
                     gyro_noise=gyro_noise, solver=solver, yaw0=yaw0, **top)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError("--config", f"file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("--config", f"invalid TOML: {exc}") from None
    return from_dict(data)


def apply_overrides(cfg: RunConfig, *, seed=None, filter_choice=None, wheel_radius=None,
                    track_width=None, lam=None, gps_sigma=None) -> RunConfig:
    """Command-line flags win over the file."""
    try:
        if wheel_radius is not None or track_width is not None:
            geom = VehicleGeometry(
                cfg.geometry.wheel_radius if wheel_radius is None else wheel_radius,
                cfg.geometry.track_width if track_width is None else track_width,
            )
            cfg = replace(cfg, geometry=geom, trajectory=replace(cfg.trajectory, geom=geom))
    except ValueError as exc:
        raise ConfigError("--wheel-radius" if "wheel" in str(exc) else "--track-width", str(exc)) from None
    if lam is not None:
        try:
            cfg = replace(cfg, rls=replace(cfg.rls, lam=lam))
        except ValueError as exc:
            raise ConfigError("--lambda", str(exc)) from None
    if gps_sigma is not None:
        if not gps_sigma > 0:
            raise ConfigError("--gps-sigma", "must be positive")
        cfg = replace(cfg, gps_sigma_m=gps_sigma, trajectory=replace(cfg.trajectory, gps_sigma_m=gps_sigma))
    if filter_choice is not None:
        cfg = replace(cfg, filter_choice=filter_choice)
    if seed is not None:
        cfg = replace(cfg, seed=seed, gyro_noise=replace(cfg.gyro_noise, seed=seed))
    return cfg
