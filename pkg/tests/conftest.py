import dataclasses

import numpy as np
import pytest

from wzwarn.config import AppConfig, PipelineConfig, ScenarioConfig


def fast_scenario(**overrides) -> ScenarioConfig:
    """Quarter-resolution lab scenario for fast end-to-end tests."""
    base = dict(
        image_width=320,
        image_height=240,
        focal_px=225.0,
        cx=160.0,
        cy=120.0,
        initial_distance_m=2.0,
        duration_s=2.0,
        noise_sigma0_m=0.0,
        noise_k_per_m=0.0,
        z_far_m=8.0,
    )
    base.update(overrides)
    return ScenarioConfig(**base)


def fast_app(scenario_overrides=None, pipeline_overrides=None) -> AppConfig:
    scenario = fast_scenario(**(scenario_overrides or {}))
    pipeline_kwargs = dict(min_component_area=80)
    pipeline_kwargs.update(pipeline_overrides or {})
    return AppConfig(scenario=scenario, pipeline=PipelineConfig(**pipeline_kwargs)).validate()


@pytest.fixture
def app():
    return fast_app()


def blob(height, width, value=255) -> np.ndarray:
    return np.full((height, width), value, dtype=np.uint8)


def place(canvas: np.ndarray, patch: np.ndarray, y: int, x: int) -> np.ndarray:
    canvas[y : y + patch.shape[0], x : x + patch.shape[1]] = patch
    return canvas
