"""Scenario and pipeline configuration.

Two presets ship with the package:

- ``lab``: robot-scale straight road (0.35 m lanes, sub-meter distances,
  proximity warning at 0.3 m), matching the laboratory setup the pipeline is
  demonstrated on.
- ``field``: highway-scale geometry (3.6 m lanes, truck-mast camera, speeds
  in the tens of m/s) for exercising the stopping-sight-distance modes.

Configs load from JSON files shaped as::

    {"preset": "lab", "scenario": {...overrides...}, "pipeline": {...overrides...}}

Unknown or ill-typed fields raise ConfigError naming the offending field.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from . import safety


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass(frozen=True)
class ScenarioConfig:
    """Synthetic-road scenario: camera intrinsics, lane geometry, target motion."""

    preset: str = "lab"
    image_width: int = 640
    image_height: int = 480
    focal_px: float = 450.0
    cx: float = 320.0
    cy: float = 240.0
    camera_height_m: float = 0.20
    lane_width_m: float = 0.35
    # world x of the three lane boundaries relative to the camera, left to right
    lane_offsets_m: tuple[float, float, float] = (-0.525, -0.175, 0.175)
    target_lane: str = "right"
    initial_distance_m: float = 3.0
    relative_speed_mps: float = -0.2
    frame_rate_hz: float = 10.0
    duration_s: float = 20.0
    noise_sigma0_m: float = 0.005
    noise_k_per_m: float = 0.005
    seed: int = 0
    vehicle_width_m: float = 0.20
    vehicle_height_m: float = 0.10
    z_near_m: float = 0.2
    # 12 m keeps the converging boundary lines separated near the vanishing point
    z_far_m: float = 12.0
    # 3 px keeps even steep boundary lines connected through the median filter
    line_stroke_px: int = 3

    def validate(self) -> None:
        positive = (
            "image_width", "image_height", "focal_px", "camera_height_m",
            "lane_width_m", "initial_distance_m", "frame_rate_hz", "duration_s",
            "vehicle_width_m", "vehicle_height_m", "z_near_m", "z_far_m",
            "line_stroke_px",
        )
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"scenario.{name}: must be positive, got {getattr(self, name)}")
        if self.target_lane not in ("left", "right"):
            raise ConfigError(f"scenario.target_lane: must be 'left' or 'right', got {self.target_lane!r}")
        offsets = self.lane_offsets_m
        if len(offsets) != 3 or not (offsets[0] < offsets[1] < offsets[2]):
            raise ConfigError(
                f"scenario.lane_offsets_m: need 3 strictly increasing values, got {offsets}"
            )
        if self.noise_sigma0_m < 0 or self.noise_k_per_m < 0:
            raise ConfigError("scenario.noise_sigma0_m / noise_k_per_m: must be >= 0")
        if self.z_near_m >= self.z_far_m:
            raise ConfigError(
                f"scenario.z_near_m: must be below z_far_m, got {self.z_near_m} >= {self.z_far_m}"
            )
        if self.initial_distance_m <= self.z_near_m:
            raise ConfigError(
                "scenario.initial_distance_m: target starts behind z_near_m; nothing to simulate"
            )

    @property
    def frame_count(self) -> int:
        return int(round(self.duration_s * self.frame_rate_hz))

    def timestamp_ns(self, frame_index: int) -> int:
        # exact integer timestamps for integral frame rates
        if float(self.frame_rate_hz).is_integer():
            return (frame_index * 1_000_000_000) // int(self.frame_rate_hz)
        return int(round(frame_index * 1e9 / self.frame_rate_hz))

    def lane_center_m(self, lane: str) -> float:
        a, b, c = self.lane_offsets_m
        if lane == "left":
            return (a + b) / 2.0
        if lane == "right":
            return (b + c) / 2.0
        raise ConfigError(f"scenario.target_lane: must be 'left' or 'right', got {lane!r}")


@dataclass(frozen=True)
class PipelineConfig:
    """Perception-side knobs: geometry chain, tracker, and warning rule."""

    mode: str = safety.MODE_SIM
    sim_threshold_m: float = safety.DEFAULT_SIM_THRESHOLD_M
    median_kernel: int = 3
    # bare default follows the published 500-pixel area threshold; presets
    # override it to match their rendered line sizes
    min_component_area: int = 500
    central_fraction: float = 1.0 / 3.0
    max_plausible_speed_mps: float = 100.0
    speed_baseline_frames: int = 1
    debounce_frames: int = 1
    monitored_lane: str = "right"
    t_reaction_s: float = 2.5
    a_decel_ftps2: float = 11.2

    def validate(self) -> None:
        if self.mode not in safety.MODES:
            raise ConfigError(
                f"pipeline.mode: {self.mode!r} not one of {safety.MODES}"
            )
        if self.sim_threshold_m <= 0:
            raise ConfigError("pipeline.sim_threshold_m: must be positive")
        if self.median_kernel < 3 or self.median_kernel % 2 == 0:
            raise ConfigError("pipeline.median_kernel: must be an odd integer >= 3")
        if self.min_component_area < 0:
            raise ConfigError("pipeline.min_component_area: must be >= 0")
        if not (0.0 < self.central_fraction <= 1.0):
            raise ConfigError("pipeline.central_fraction: must be in (0, 1]")
        if self.max_plausible_speed_mps <= 0:
            raise ConfigError("pipeline.max_plausible_speed_mps: must be positive")
        if self.speed_baseline_frames < 1:
            raise ConfigError("pipeline.speed_baseline_frames: must be >= 1")
        if self.debounce_frames < 1:
            raise ConfigError("pipeline.debounce_frames: must be >= 1")
        if self.monitored_lane not in ("left", "right"):
            raise ConfigError(
                f"pipeline.monitored_lane: must be 'left' or 'right', got {self.monitored_lane!r}"
            )
        if self.t_reaction_s <= 0 or self.a_decel_ftps2 <= 0:
            raise ConfigError("pipeline.t_reaction_s / a_decel_ftps2: must be positive")

    @property
    def ssd_params(self) -> safety.SsdParams:
        return safety.SsdParams(self.t_reaction_s, self.a_decel_ftps2)


@dataclass(frozen=True)
class AppConfig:
    scenario: ScenarioConfig
    pipeline: PipelineConfig

    def validate(self) -> "AppConfig":
        self.scenario.validate()
        self.pipeline.validate()
        return self


def lab_preset() -> AppConfig:
    return AppConfig(
        scenario=ScenarioConfig(),
        pipeline=PipelineConfig(mode=safety.MODE_SIM, min_component_area=150),
    )


def field_preset() -> AppConfig:
    return AppConfig(
        scenario=ScenarioConfig(
            preset="field",
            camera_height_m=3.0,
            lane_width_m=3.6,
            lane_offsets_m=(-5.4, -1.8, 1.8),
            initial_distance_m=250.0,
            relative_speed_mps=-26.8224,  # 60 mph closing
            duration_s=8.0,
            noise_sigma0_m=0.02,
            vehicle_width_m=1.8,
            vehicle_height_m=1.5,
            z_near_m=2.0,
            z_far_m=200.0,
        ),
        pipeline=PipelineConfig(mode=safety.MODE_FIELD_CONTINUOUS, min_component_area=150),
    )


PRESETS = {"lab": lab_preset, "field": field_preset}

_MODE_ALIASES = {"sim": safety.MODE_SIM}


def canonical_mode(mode: str) -> str:
    return _MODE_ALIASES.get(mode, mode)


def _apply_section(base, section_name: str, overrides: dict):
    valid = {f.name for f in dataclasses.fields(base)}
    cleaned = {}
    for key, value in overrides.items():
        if key not in valid:
            raise ConfigError(f"{section_name}.{key}: unknown field")
        if key == "lane_offsets_m":
            try:
                value = tuple(float(v) for v in value)
            except (TypeError, ValueError):
                raise ConfigError(f"{section_name}.{key}: expected 3 numbers, got {value!r}")
        elif key == "mode":
            value = canonical_mode(str(value))
        else:
            current = getattr(base, key)
            try:
                if isinstance(current, bool):
                    value = bool(value)
                elif isinstance(current, int):
                    value = int(value)
                elif isinstance(current, float):
                    value = float(value)
                elif isinstance(current, str):
                    value = str(value)
            except (TypeError, ValueError):
                raise ConfigError(f"{section_name}.{key}: bad value {value!r}")
        cleaned[key] = value
    return dataclasses.replace(base, **cleaned)


def config_from_dict(raw: dict) -> AppConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be an object")
    unknown = set(raw) - {"preset", "scenario", "pipeline"}
    if unknown:
        raise ConfigError(f"config.{sorted(unknown)[0]}: unknown section")
    preset_name = raw.get("preset", "lab")
    if preset_name not in PRESETS:
        raise ConfigError(f"config.preset: {preset_name!r} not one of {sorted(PRESETS)}")
    base = PRESETS[preset_name]()
    scenario = _apply_section(base.scenario, "scenario", raw.get("scenario", {}) or {})
    pipeline = _apply_section(base.pipeline, "pipeline", raw.get("pipeline", {}) or {})
    return AppConfig(scenario=scenario, pipeline=pipeline).validate()


def load_config(path: str | Path | None, preset: str = "lab") -> AppConfig:
    """Load an AppConfig from a JSON file, or the named preset when path is None."""
    if path is None:
        if preset not in PRESETS:
            raise ConfigError(f"config.preset: {preset!r} not one of {sorted(PRESETS)}")
        return PRESETS[preset]().validate()
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config: file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: {path} is not valid JSON: {exc}")
    return config_from_dict(raw)


def config_to_dict(cfg: AppConfig) -> dict:
    scenario = dataclasses.asdict(cfg.scenario)
    scenario["lane_offsets_m"] = list(scenario["lane_offsets_m"])
    return {"scenario": scenario, "pipeline": dataclasses.asdict(cfg.pipeline)}
