"""Deterministic synthetic road sensor.

Renders a straight two-lane road through a pinhole camera model: three lane
boundary lines rasterized into the lane mask, and a single target vehicle
whose projected box is filled into the depth image at its true range plus
seeded Gaussian noise. Each frame comes with per-frame ground truth so runs
can be scored exactly.

Camera frame: x lateral (right positive), y vertical measured downward from
the optical axis (the ground sits at y = camera_height), z forward. A world
line at constant lateral offset projects to an exactly straight image line,
so the geometry chain can be validated against closed-form answers.

Depth values are quantized to whole millimeters at generation time. That
makes the in-memory frame bit-identical to its recorded form (depth files are
16-bit millimeter PGMs), so live runs and replays see the same numbers.
"""

from __future__ import annotations

from collections.abc import Iterator

import numpy as np

from .config import ScenarioConfig
from .frames import Detection, FrameBundle, GroundTruth
from .geometry import BoundingBox


class TargetPassedError(RuntimeError):
    """Target reached the near clip plane; the scenario is over."""


def project(x_m: float, y_m: float, z_m: float, cfg: ScenarioConfig) -> tuple[float, float]:
    """Pinhole projection of a camera-frame point to pixel coordinates."""
    if z_m <= 0:
        raise ValueError(f"point behind camera: z={z_m}")
    u = cfg.cx + cfg.focal_px * x_m / z_m
    v = cfg.cy + cfg.focal_px * y_m / z_m
    return u, v


def target_distance_m(cfg: ScenarioConfig, t_s: float) -> float:
    return cfg.initial_distance_m + cfg.relative_speed_mps * t_s


def rasterize_lane_mask(cfg: ScenarioConfig) -> np.ndarray:
    """Lane mask with the three boundary lines drawn over z in [z_near, z_far].

    Each line is swept with a stroke_px-square brush along a dense parametric
    sampling, so steep lines stay 8-connected and thick enough to survive the
    pipeline's median filter. The road is static relative to the camera, so
    the mask is the same for every frame of a scenario.
    """
    h, w = cfg.image_height, cfg.image_width
    mask = np.zeros((h, w), dtype=np.uint8)
    fh = cfg.focal_px * cfg.camera_height_m
    # rows whose ground distance falls inside [z_near, z_far]
    v_lo = max(cfg.cy + fh / cfg.z_far_m, np.floor(cfg.cy) + 1.0)
    v_hi = min(cfg.cy + fh / cfg.z_near_m, float(h - 1))
    if v_hi < v_lo:
        return mask
    stroke = cfg.line_stroke_px
    brush = range(-(stroke // 2), stroke - stroke // 2)
    for offset in cfg.lane_offsets_m:
        # ground line at constant lateral offset: u is linear in (v - cy)
        slope = offset / cfg.camera_height_m
        u_lo = cfg.cx + slope * (v_lo - cfg.cy)
        u_hi = cfg.cx + slope * (v_hi - cfg.cy)
        steps = int(np.ceil(2 * max(abs(u_hi - u_lo), v_hi - v_lo))) + 1
        t = np.linspace(0.0, 1.0, steps)
        us = np.round(u_lo + t * (u_hi - u_lo)).astype(int)
        vs = np.round(v_lo + t * (v_hi - v_lo)).astype(int)
        for dy in brush:
            for dx in brush:
                rows = vs + dy
                cols = us + dx
                ok = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
                mask[rows[ok], cols[ok]] = 255
    return mask


def project_vehicle_bbox(cfg: ScenarioConfig, z_m: float) -> BoundingBox | None:
    """Integer pixel box of the target at range z, clipped to the image.

    Returns None when the vehicle is entirely outside the frame.
    """
    x_c = cfg.lane_center_m(cfg.target_lane)
    u0, v0 = project(x_c - cfg.vehicle_width_m / 2, cfg.camera_height_m - cfg.vehicle_height_m, z_m, cfg)
    u1, v1 = project(x_c + cfg.vehicle_width_m / 2, cfg.camera_height_m, z_m, cfg)
    x_min, x_max = int(round(u0)), int(round(u1))
    y_min, y_max = int(round(v0)), int(round(v1))
    x_max = max(x_max, x_min + 1)
    y_max = max(y_max, y_min + 1)
    if x_max <= 0 or y_max <= 0 or x_min >= cfg.image_width or y_min >= cfg.image_height:
        return None
    x_min = max(0, x_min)
    y_min = max(0, y_min)
    x_max = min(cfg.image_width, x_max)
    y_max = min(cfg.image_height, y_max)
    if x_max <= x_min or y_max <= y_min:
        return None
    return BoundingBox(x_min=x_min, y_min=y_min, x_max=x_max, y_max=y_max)


def _quantize_depth_mm(values_m: np.ndarray) -> np.ndarray:
    """Round to whole millimeters; values at or below zero become invalid (0)."""
    mm = np.round(values_m * 1000.0)
    mm[mm < 0] = 0
    return mm / 1000.0


def generate_frame(
    cfg: ScenarioConfig,
    frame_index: int,
    rng: np.random.Generator,
    lane_mask: np.ndarray | None = None,
) -> tuple[FrameBundle, GroundTruth]:
    """Render frame ``frame_index`` (at t = index / frame_rate on the scenario clock).

    Raises TargetPassedError once the target reaches the near clip plane.
    The precomputed static ``lane_mask`` may be passed to avoid re-rasterizing.
    """
    t_s = frame_index / cfg.frame_rate_hz
    z = target_distance_m(cfg, t_s)
    if z <= cfg.z_near_m:
        raise TargetPassedError(f"target at {z:.3f} m reached z_near {cfg.z_near_m} m")
    mask = lane_mask if lane_mask is not None else rasterize_lane_mask(cfg)
    depth = np.zeros((cfg.image_height, cfg.image_width), dtype=np.float64)
    bbox = project_vehicle_bbox(cfg, z)
    detections: tuple[Detection, ...] = ()
    if bbox is not None:
        shape = (bbox.height, bbox.width)
        sigma = cfg.noise_sigma0_m + cfg.noise_k_per_m * z
        if sigma > 0:
            values = z + rng.normal(0.0, sigma, size=shape)
        else:
            values = np.full(shape, z, dtype=np.float64)
        depth[bbox.y_min : bbox.y_max, bbox.x_min : bbox.x_max] = _quantize_depth_mm(values)
        detections = (Detection(bbox=bbox, label="vehicle", confidence=1.0),)
    bundle = FrameBundle(
        seq=frame_index,
        timestamp_ns=cfg.timestamp_ns(frame_index),
        lane_mask=mask.copy() if lane_mask is not None else mask,
        depth=depth,
        detections=detections,
    )
    truth = GroundTruth(
        distance_m=z,
        speed_mps=cfg.relative_speed_mps,
        lane=cfg.target_lane,
        bbox=bbox,
        occluded=False,
    )
    return bundle, truth


def run_scenario(cfg: ScenarioConfig) -> Iterator[tuple[FrameBundle, GroundTruth]]:
    """Yield (FrameBundle, GroundTruth) at 1/frame_rate intervals on the scenario clock.

    Stops at the configured duration or when the target passes the near clip
    plane, whichever comes first. Identical seeds yield byte-identical frames.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    static_mask = rasterize_lane_mask(cfg)
    for k in range(cfg.frame_count):
        try:
            yield generate_frame(cfg, k, rng, lane_mask=static_mask)
        except TargetPassedError:
            return
