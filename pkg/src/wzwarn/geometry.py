"""Lane-mask post-processing: denoise, extract components, fit boundary lines,
and assign detected vehicles to lanes.

Masks are 8-bit grayscale numpy arrays of shape (height, width); any nonzero
pixel is a lane-line pixel. Lane boundaries are parameterized as x expressed
as a linear function of y (x = m*y + b) because near-vertical lines are the
common case and this form keeps their slopes finite.

All functions here are pure and safe to call from any thread.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np


class DegenerateComponentError(ValueError):
    """Component spans a single image row; no line can be fitted."""


class PgmFormatError(ValueError):
    """A PGM file or byte stream is not in the expected P5 format."""


class LaneAssignment(Enum):
    LEFT = "left"
    RIGHT = "right"
    OUTSIDE = "outside"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned pixel box, half-open: covers x in [x_min, x_max), y in [y_min, y_max)."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"bounding box degenerate: {self}")

    @property
    def width(self) -> int:
        return self.x_max - self.x_min

    @property
    def height(self) -> int:
        return self.y_max - self.y_min

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)


@dataclass(frozen=True)
class Component:
    """One 8-connected blob of nonzero mask pixels.

    ``pixels`` is an (N, 2) int array of (x, y) coordinates. ``seed`` is the
    component's first pixel in row-major (y, x) scan order, used for
    deterministic tie-breaking.
    """

    pixels: np.ndarray
    seed: tuple[int, int]

    @property
    def area(self) -> int:
        return len(self.pixels)


@dataclass(frozen=True)
class LaneLine:
    """Lane boundary x(y) = m*y + b in pixel space."""

    m: float
    b: float
    source_area: int = 0

    def x(self, y: float) -> float:
        return self.m * y + self.b


@dataclass(frozen=True)
class LaneSet:
    """The three labeled boundaries, ordered left to right at the image bottom."""

    left: LaneLine
    medium: LaneLine
    right: LaneLine


def median_blur(img: np.ndarray, kernel: int = 3) -> np.ndarray:
    """Median filter with edge-replicated borders.

    Each output pixel is the median of its kernel x kernel neighborhood, so
    for odd kernels the output value is always a member of that neighborhood.
    """
    if kernel < 3 or kernel % 2 == 0:
        raise ValueError(f"kernel must be an odd integer >= 3, got {kernel}")
    h, w = img.shape
    if kernel > min(h, w):
        raise ValueError(f"kernel {kernel} exceeds image dimensions {w}x{h}")
    pad = kernel // 2
    padded = np.pad(img, pad, mode="edge")
    planes = np.stack(
        [padded[dy : dy + h, dx : dx + w] for dy in range(kernel) for dx in range(kernel)]
    )
    planes.sort(axis=0)
    return np.ascontiguousarray(planes[kernel * kernel // 2])


_NEIGHBORS_8 = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


def connected_components(img: np.ndarray, min_area: int = 0) -> list[Component]:
    """8-connected components of nonzero pixels with at least ``min_area`` pixels.

    Returned in descending area order; ties broken by the smallest (y, x)
    pixel. The kept components partition the kept pixels: every pixel belongs
    to exactly one component.
    """
    nz = img != 0
    ys, xs = np.nonzero(nz)
    if len(ys) == 0:
        return []
    remaining = set(zip(ys.tolist(), xs.tolist()))
    components: list[Component] = []
    # seeds iterated in row-major order, so a component's seed is its minimal (y, x)
    for y0, x0 in zip(ys.tolist(), xs.tolist()):
        if (y0, x0) not in remaining:
            continue
        remaining.discard((y0, x0))
        queue = deque(((y0, x0),))
        members = []
        while queue:
            y, x = queue.popleft()
            members.append((x, y))
            for dy, dx in _NEIGHBORS_8:
                pos = (y + dy, x + dx)
                if pos in remaining:
                    remaining.discard(pos)
                    queue.append(pos)
        if len(members) >= max(min_area, 1):
            pixels = np.array(members, dtype=np.int64)
            components.append(Component(pixels=pixels, seed=(y0, x0)))
    components.sort(key=lambda c: (-c.area, c.seed))
    return components


def fit_lane_line(component: Component) -> LaneLine:
    """Fit x = m*y + b through the component's extreme rows.

    The endpoints are the mean x over pixels at the component's minimum and
    maximum y; averaging makes the fit deterministic and robust to stroke
    thickness.
    """
    ys = component.pixels[:, 1]
    xs = component.pixels[:, 0]
    y_min = int(ys.min())
    y_max = int(ys.max())
    if y_max == y_min:
        raise DegenerateComponentError(
            f"component spans single row y={y_min}; cannot fit a lane line"
        )
    x_top = float(xs[ys == y_min].mean())
    x_bot = float(xs[ys == y_max].mean())
    m = (x_bot - x_top) / (y_max - y_min)
    b = x_top - m * y_min
    return LaneLine(m=m, b=b, source_area=component.area)


def label_lanes(lines: list[LaneLine], image_height: int) -> LaneSet | None:
    """Label the three largest-area lines left/medium/right by x at the image bottom.

    Returns None (unknown) when fewer than three lines are available rather
    than guessing; callers apply their own fail-safe.
    """
    if len(lines) < 3:
        return None
    top3 = sorted(lines, key=lambda ln: -ln.source_area)[:3]
    y_bottom = image_height - 1
    ordered = sorted(top3, key=lambda ln: ln.x(y_bottom))
    return LaneSet(left=ordered[0], medium=ordered[1], right=ordered[2])


def assign_lane(bbox: BoundingBox, lanes: LaneSet) -> LaneAssignment:
    """Classify a detection by comparing its bbox center against the boundaries.

    Boundary ties close on the left: a center exactly on a boundary belongs
    to the lane on that boundary's right side, which makes the rule total and
    deterministic.
    """
    x_c, y_c = bbox.center
    x_left = lanes.left.x(y_c)
    x_medium = lanes.medium.x(y_c)
    x_right = lanes.right.x(y_c)
    if x_left <= x_c < x_medium:
        return LaneAssignment.LEFT
    if x_medium <= x_c < x_right:
        return LaneAssignment.RIGHT
    return LaneAssignment.OUTSIDE


def mask_to_pgm_bytes(img: np.ndarray) -> bytes:
    """Serialize a mask to 8-bit binary PGM (P5) bytes; nonzero = lane pixel."""
    arr = np.asarray(img, dtype=np.uint8)
    h, w = arr.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + arr.tobytes()


def mask_from_pgm_bytes(data: bytes, name: str = "<bytes>") -> np.ndarray:
    """Parse 8-bit binary PGM bytes into a (h, w) uint8 array."""
    width, height, maxval, offset = _parse_pgm_header(data, name)
    if maxval != 255:
        raise PgmFormatError(f"{name}: expected maxval 255 for mask, got {maxval}")
    expected = width * height
    pixels = data[offset : offset + expected]
    if len(pixels) != expected:
        raise PgmFormatError(f"{name}: truncated pixel data ({len(pixels)} of {expected} bytes)")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width).copy()


def write_mask_pgm(path: str | Path, img: np.ndarray) -> None:
    """Write an 8-bit binary PGM (P5); nonzero = lane pixel."""
    Path(path).write_bytes(mask_to_pgm_bytes(img))


def read_mask_pgm(path: str | Path) -> np.ndarray:
    """Read an 8-bit binary PGM (P5) into a (h, w) uint8 array."""
    return mask_from_pgm_bytes(Path(path).read_bytes(), str(path))


def _parse_pgm_header(data: bytes, name: str) -> tuple[int, int, int, int]:
    """Parse a P5 header; returns (width, height, maxval, pixel data offset)."""
    if not data.startswith(b"P5"):
        raise PgmFormatError(f"{name}: not a binary PGM (missing P5 magic)")
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise PgmFormatError(f"{name}: malformed header token {token!r}")
        fields.append(int(token))
    if pos >= len(data):
        raise PgmFormatError(f"{name}: header ends before pixel data")
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise PgmFormatError(f"{name}: non-positive dimensions {width}x{height}")
    return width, height, maxval, pos
