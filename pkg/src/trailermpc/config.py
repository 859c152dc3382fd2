"""Experiment configuration: TOML loading, validation, object factories.

All angles in configuration files are in degrees and are converted to
radians on load.  Every section is optional; omitted keys fall back to
the benchmark defaults so that an empty file is a valid experiment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

try:  # Python 3.11+
    import tomllib as _toml
except ModuleNotFoundError:  # pragma: no cover
    import tomli as _toml

from .errors import ConfigError, TrailerMpcError
from .model import (SLIP_MAX, SLIP_MIN, ActuatorConfig, NoiseConfig, Plant,
                    SlipParams, VehicleGeometry, aligned_initial_state,
                    constant_profile)
from .nmhe import EstimatorConfig
from .nmpc import VARIANTS, ControllerConfig, ControllerWeights
from .reference import PathBuilder, TrajectorySpec, benchmark_path


@dataclass(frozen=True)
class RunSettings:
    variant: str = "cooperative"
    seed: int = 2024
    duration: float | None = None  # s; None runs until the path end
    sample_time: float = 0.2

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"run.variant must be one of {VARIANTS}, "
                              f"got {self.variant!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("run.seed must be a non-negative integer")
        if self.duration is not None and self.duration <= 0:
            raise ConfigError("run.duration must be positive")
        if self.sample_time <= 0:
            raise ConfigError("run.sample_time must be positive")


@dataclass(frozen=True)
class PlantSettings:
    speed: float = 1.0
    slip_longitudinal: float = 0.8
    slip_tractor_steer: float = 0.9
    slip_trailer_steer: float = 0.85
    inner_step: float = 0.02
    tractor_lag: float = 0.3
    trailer_lag: float = 0.6
    tractor_rate_limit: float = 1.0
    trailer_rate_limit: float = 0.8

    def __post_init__(self):
        if self.speed <= 0:
            raise ConfigError("plant.speed must be positive")
        if self.inner_step <= 0:
            raise ConfigError("plant.inner_step must be positive")
        for name in ("slip_longitudinal", "slip_tractor_steer",
                     "slip_trailer_steer"):
            v = getattr(self, name)
            if not (SLIP_MIN <= v <= SLIP_MAX):
                raise ConfigError(f"plant.{name} must lie in "
                                  f"[{SLIP_MIN}, {SLIP_MAX}]")
        for name in ("tractor_lag", "trailer_lag", "tractor_rate_limit",
                     "trailer_rate_limit"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"plant.{name} must be positive")


@dataclass(frozen=True)
class StartPose:
    """Initial tractor pose.  The default x places the tractor one rig
    length into the path so the trailer starts on the path as well."""

    x: float = 2.4
    y: float = 0.0
    heading: float = 0.0       # rad after loading
    lateral_offset: float = 0.0


@dataclass(frozen=True)
class TrajectorySettings:
    kind: str = "benchmark"
    length: float = 100.0              # for kind == "straight"
    segments: tuple = ()               # for kind == "segments"
    start: StartPose = field(default_factory=StartPose)

    def __post_init__(self):
        if self.kind not in ("benchmark", "straight", "segments"):
            raise ConfigError("trajectory.kind must be benchmark, straight "
                              f"or segments, got {self.kind!r}")
        if self.kind == "straight" and self.length <= 0:
            raise ConfigError("trajectory.length must be positive")
        if self.kind == "segments" and not self.segments:
            raise ConfigError("trajectory.segments must not be empty")


@dataclass(frozen=True)
class ExperimentConfig:
    run: RunSettings = field(default_factory=RunSettings)
    plant: PlantSettings = field(default_factory=PlantSettings)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    noise_scale: float = 1.0
    geometry: VehicleGeometry = field(default_factory=VehicleGeometry)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    trajectory: TrajectorySettings = field(default_factory=TrajectorySettings)

    def __post_init__(self):
        if self.noise_scale < 0:
            raise ConfigError("noise.scale must be non-negative")
        if abs(self.controller.sample_time - self.run.sample_time) > 1e-12:
            raise ConfigError("controller.sample_time must match "
                              "run.sample_time")

    # -- factories ---------------------------------------------------------

    def build_path(self) -> TrajectorySpec:
        traj = self.trajectory
        if traj.kind == "benchmark":
            return benchmark_path()
        if traj.kind == "straight":
            return PathBuilder(traj.start.x, traj.start.y,
                               traj.start.heading).line(traj.length).build()
        builder = PathBuilder(traj.start.x, traj.start.y, traj.start.heading)
        for seg in traj.segments:
            if seg[0] == "line":
                builder.line(seg[1])
            else:
                builder.arc(seg[1], seg[2])
        return builder.build()

    def true_slips(self) -> SlipParams:
        return SlipParams(self.plant.slip_longitudinal,
                          self.plant.slip_tractor_steer,
                          self.plant.slip_trailer_steer)

    def build_plant(self) -> Plant:
        p = self.plant
        start = self.trajectory.start
        state = aligned_initial_state(start.x, start.y, start.heading,
                                      p.speed, self.geometry,
                                      start.lateral_offset)
        actuators = ActuatorConfig(p.tractor_lag, p.trailer_lag,
                                   p.tractor_rate_limit, p.trailer_rate_limit)
        return Plant(state, self.geometry, slips=self.true_slips(),
                     speed_profile=constant_profile(p.speed),
                     actuators=actuators,
                     noise=self.noise.scaled(self.noise_scale),
                     inner_step=p.inner_step)

    def with_variant(self, variant: str) -> "ExperimentConfig":
        return replace(self, run=replace(self.run, variant=variant),
                       controller=replace(self.controller, variant=variant))

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, run=replace(self.run, seed=int(seed)))


# ---------------------------------------------------------------------------
# TOML loading
# ---------------------------------------------------------------------------

_KNOWN_SECTIONS = {"run", "plant", "noise", "geometry", "estimator",
                   "controller", "trajectory"}


def _take(table: dict, section: str, allowed: dict) -> dict:
    """Pull recognized keys out of a section, rejecting unknown ones."""
    out = {}
    for key, value in table.items():
        if key not in allowed:
            raise ConfigError(f"unknown key {section}.{key}")
        out[allowed[key] or key] = value
    return out


def _as_radians(value):
    return math.radians(float(value))


def parse_config(data: dict) -> ExperimentConfig:
    """Build an ExperimentConfig from a parsed TOML document."""
    if not isinstance(data, dict):
        raise ConfigError("configuration root must be a table")
    unknown = set(data) - _KNOWN_SECTIONS
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")

    try:
        run = RunSettings(**_take(data.get("run", {}), "run", {
            "variant": None, "seed": None, "duration": None,
            "sample_time": None}))
        plant = PlantSettings(**_take(data.get("plant", {}), "plant", {
            "speed": None, "slip_longitudinal": None,
            "slip_tractor_steer": None, "slip_trailer_steer": None,
            "inner_step": None, "tractor_lag": None, "trailer_lag": None,
            "tractor_rate_limit": None, "trailer_rate_limit": None}))

        noise_tbl = dict(data.get("noise", {}))
        noise_scale = float(noise_tbl.pop("scale", 1.0))
        noise = NoiseConfig(**_take(noise_tbl, "noise", {
            "position": None, "hitch_angle": None, "speed": None,
            "steer": None}))

        geometry = VehicleGeometry(**_take(data.get("geometry", {}),
                                           "geometry", {
            "tractor_wheelbase": None, "trailer_wheelbase": None,
            "hitch_offset": None}))

        est_kwargs = _take(data.get("estimator", {}), "estimator", {
            "window": None, "initial_slip": None, "substeps": None,
            "process_weight": None})
        estimator = EstimatorConfig(**est_kwargs)

        ctl_tbl = dict(data.get("controller", {}))
        weight_keys = {"stage_q": None, "input_r": None, "terminal_s": None,
                       "rho_tractor": None, "rho_trailer": None}
        weight_kwargs = _take(
            {k: v for k, v in ctl_tbl.items() if k in weight_keys},
            "controller", weight_keys)
        if "stage_q" in weight_kwargs:
            weight_kwargs["stage_q"] = tuple(
                float(v) for v in weight_kwargs["stage_q"])
        if "terminal_s" in weight_kwargs:
            weight_kwargs["terminal_s"] = tuple(
                float(v) for v in weight_kwargs["terminal_s"])
        other = {k: v for k, v in ctl_tbl.items() if k not in weight_keys}
        ctl_kwargs = _take(other, "controller", {
            "horizon": None, "substeps": None, "reference_mode": None})
        controller = ControllerConfig(
            variant=run.variant, sample_time=run.sample_time,
            weights=ControllerWeights(**weight_kwargs), **ctl_kwargs)

        traj_tbl = dict(data.get("trajectory", {}))
        start_tbl = traj_tbl.pop("start", {})
        start_kwargs = _take(start_tbl, "trajectory.start", {
            "x": None, "y": None, "heading": None, "lateral_offset": None})
        if "heading" in start_kwargs:
            start_kwargs["heading"] = _as_radians(start_kwargs["heading"])
        segments = traj_tbl.pop("segments", ())
        parsed_segments = []
        for seg in segments:
            if not seg or seg[0] not in ("line", "arc"):
                raise ConfigError(
                    "trajectory segments must start with 'line' or 'arc'")
            if seg[0] == "line":
                if len(seg) != 2:
                    raise ConfigError("line segments take one length value")
                parsed_segments.append(("line", float(seg[1])))
            else:
                if len(seg) != 3:
                    raise ConfigError(
                        "arc segments take radius and sweep (degrees)")
                parsed_segments.append(("arc", float(seg[1]),
                                        _as_radians(seg[2])))
        traj_kwargs = _take(traj_tbl, "trajectory", {
            "kind": None, "length": None})
        trajectory = TrajectorySettings(
            segments=tuple(parsed_segments),
            start=StartPose(**start_kwargs), **traj_kwargs)
    except ConfigError:
        raise
    except TypeError as exc:
        raise ConfigError(f"invalid configuration value: {exc}") from exc
    except (ValueError, TrailerMpcError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc

    return ExperimentConfig(run=run, plant=plant, noise=noise,
                            noise_scale=noise_scale, geometry=geometry,
                            estimator=estimator, controller=controller,
                            trajectory=trajectory)


def load_config(path) -> ExperimentConfig:
    """Read and validate a TOML experiment configuration file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"configuration file not found: {path}")
    try:
        with open(path, "rb") as fh:
            data = _toml.load(fh)
    except _toml.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML in {path}: {exc}") from exc
    return parse_config(data)


def default_config() -> ExperimentConfig:
    """The benchmark experiment with all defaults."""
    return ExperimentConfig()
