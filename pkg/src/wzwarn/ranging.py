"""Depth-image ranging and finite-difference closing-speed estimation.

Depth images are (height, width) float arrays in meters; invalid pixels are
encoded as non-positive or non-finite values. Distance to a detection is the
mean depth over the central sub-region of its bounding box, which rejects
background pixels near the box edges. Speed is the finite difference of
consecutive accepted distance samples; negative speed means the target is
approaching.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import BoundingBox, LaneAssignment, PgmFormatError, _parse_pgm_header

DEFAULT_CENTRAL_FRACTION = 1.0 / 3.0
DEFAULT_MAX_PLAUSIBLE_SPEED_MPS = 100.0


class NoRangeError(ValueError):
    """The central region contains no valid depth pixels; frame skipped for ranging."""


class ClockOrderError(ValueError):
    """Sample timestamps are not strictly increasing."""


class SpeedOutlierError(ValueError):
    """Implausible speed between samples, signaling a target switch."""


@dataclass(frozen=True)
class RangeSample:
    """Distance to the tracked vehicle at one scenario-clock instant."""

    distance_m: float
    timestamp_ns: int
    valid_pixel_count: int


@dataclass(frozen=True)
class SpeedEstimate:
    """Finite-difference speed; negative = approaching (distance shrinking)."""

    speed_mps: float
    baseline_ns: int


def central_region(bbox: BoundingBox, fraction: float = DEFAULT_CENTRAL_FRACTION) -> BoundingBox:
    """Centered sub-box whose width and height are each ``fraction`` of the bbox's.

    Sizes round to at least one pixel so the region is never empty.
    """
    if not (0.0 < fraction <= 1.0):
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    cw = max(1, int(round(bbox.width * fraction)))
    ch = max(1, int(round(bbox.height * fraction)))
    x0 = bbox.x_min + (bbox.width - cw) // 2
    y0 = bbox.y_min + (bbox.height - ch) // 2
    return BoundingBox(x_min=x0, y_min=y0, x_max=x0 + cw, y_max=y0 + ch)


def estimate_distance(
    depth: np.ndarray,
    bbox: BoundingBox,
    timestamp_ns: int = 0,
    fraction: float = DEFAULT_CENTRAL_FRACTION,
) -> RangeSample:
    """Mean of the valid depth pixels within the bbox's central region."""
    region = central_region(bbox, fraction)
    patch = depth[region.y_min : region.y_max, region.x_min : region.x_max]
    valid = patch[np.isfinite(patch) & (patch > 0.0)]
    if valid.size == 0:
        raise NoRangeError(
            f"no valid depth pixels in central region {region} of bbox {bbox}"
        )
    return RangeSample(
        distance_m=float(valid.mean()),
        timestamp_ns=timestamp_ns,
        valid_pixel_count=int(valid.size),
    )


def estimate_speed(
    prev: RangeSample,
    curr: RangeSample,
    max_plausible_mps: float = DEFAULT_MAX_PLAUSIBLE_SPEED_MPS,
) -> SpeedEstimate:
    """Speed from the distance difference over the elapsed scenario time.

    Raises ClockOrderError on non-increasing timestamps and SpeedOutlierError
    when the implied speed exceeds the plausibility bound, which callers treat
    as a target switch and reset their speed chain.
    """
    elapsed_ns = curr.timestamp_ns - prev.timestamp_ns
    if elapsed_ns <= 0:
        raise ClockOrderError(
            f"timestamps not increasing: prev={prev.timestamp_ns} curr={curr.timestamp_ns}"
        )
    speed = (curr.distance_m - prev.distance_m) / (elapsed_ns / 1e9)
    if abs(speed) > max_plausible_mps:
        raise SpeedOutlierError(
            f"|{speed:.3f}| m/s exceeds plausible {max_plausible_mps} m/s; target switch assumed"
        )
    return SpeedEstimate(speed_mps=speed, baseline_ns=elapsed_ns)


@dataclass(frozen=True)
class Candidate:
    """One ranged detection offered to the target tracker."""

    index: int
    lane: LaneAssignment
    sample: RangeSample


def track_target(candidates: list[Candidate], monitored_lane: LaneAssignment) -> Candidate | None:
    """Pick the nearest detection in the monitored lane.

    Unknown-lane detections are kept as candidates (fail toward warning);
    detections in other lanes are never ranged or selected. Returns None when
    nothing qualifies.
    """
    eligible = [c for c in candidates if c.lane in (monitored_lane, LaneAssignment.UNKNOWN)]
    if not eligible:
        return None
    return min(eligible, key=lambda c: (c.sample.distance_m, c.index))


MM_PER_M = 1000
MAX_DEPTH_PGM_M = 65.535  # 16-bit millimeters


def depth_to_pgm_bytes(depth_m: np.ndarray, name: str = "<bytes>") -> bytes:
    """Serialize depth to 16-bit big-endian binary PGM bytes in millimeters; 0 = invalid.

    Values must fit the format: finite depths above 65.535 m are out of range
    for 16-bit millimeters and raise PgmFormatError.
    """
    arr = np.asarray(depth_m, dtype=np.float64)
    h, w = arr.shape
    mm = np.zeros((h, w), dtype=np.int64)
    valid = np.isfinite(arr) & (arr > 0.0)
    mm[valid] = np.round(arr[valid] * MM_PER_M).astype(np.int64)
    if mm.max(initial=0) > 0xFFFF:
        raise PgmFormatError(
            f"{name}: depth {mm.max() / MM_PER_M:.3f} m exceeds the 16-bit millimeter "
            f"range ({MAX_DEPTH_PGM_M} m)"
        )
    return f"P5\n{w} {h}\n65535\n".encode("ascii") + mm.astype(">u2").tobytes()


def depth_from_pgm_bytes(data: bytes, name: str = "<bytes>") -> np.ndarray:
    """Parse 16-bit PGM bytes into a float64 meter array; 0 stays invalid (0.0)."""
    width, height, maxval, offset = _parse_pgm_header(data, name)
    if maxval != 65535:
        raise PgmFormatError(f"{name}: expected maxval 65535 for depth, got {maxval}")
    expected = width * height * 2
    pixels = data[offset : offset + expected]
    if len(pixels) != expected:
        raise PgmFormatError(f"{name}: truncated pixel data ({len(pixels)} of {expected} bytes)")
    mm = np.frombuffer(pixels, dtype=">u2").reshape(height, width)
    return mm.astype(np.float64) / MM_PER_M


def write_depth_pgm(path: str | Path, depth_m: np.ndarray) -> None:
    """Write a 16-bit big-endian binary PGM in millimeters; 0 = invalid."""
    Path(path).write_bytes(depth_to_pgm_bytes(depth_m, str(path)))


def read_depth_pgm(path: str | Path) -> np.ndarray:
    """Read a 16-bit PGM back into a float64 meter array; 0 stays invalid (0.0)."""
    return depth_from_pgm_bytes(Path(path).read_bytes(), str(path))
