"""Frame bundle data model and its byte codec.

A FrameBundle is one synchronized sensor tick: the lane-line mask, the depth
image, the detections, and the scenario-clock timestamp. On the bus it rides
the "/camera/frame" topic encoded exactly as the recording stores frames: a
JSON header plus the mask as 8-bit PGM bytes and the depth as 16-bit
millimeter PGM bytes, each length-prefixed. In a field deployment this bundle
stands in for the separate raw color ("/camera/rgb/image_raw") and depth
("/camera/depth/image_raw") camera topics feeding a neural perceptor.

An empty-header sentinel (``{"end": true}``) marks the end of a frame stream.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .geometry import BoundingBox, mask_from_pgm_bytes, mask_to_pgm_bytes
from .ranging import depth_from_pgm_bytes, depth_to_pgm_bytes

FRAME_TOPIC = "/camera/frame"
LED_TOPIC = "/led/status"
TELEMETRY_TOPIC = "/telemetry"

_U32 = struct.Struct(">I")


class FrameCodecError(ValueError):
    """A frame payload failed to decode."""


@dataclass(frozen=True)
class Detection:
    """One detected object: box, class label, confidence in [0, 1]."""

    bbox: BoundingBox
    label: str = "vehicle"
    confidence: float = 1.0


@dataclass(frozen=True)
class GroundTruth:
    """Per-frame simulator truth used for scoring; never visible to perception."""

    distance_m: float
    speed_mps: float
    lane: str
    bbox: BoundingBox | None
    occluded: bool = False


@dataclass(frozen=True)
class FrameBundle:
    """One synchronized sensor tick."""

    seq: int
    timestamp_ns: int
    lane_mask: np.ndarray  # (h, w) uint8, nonzero = lane pixel
    depth: np.ndarray  # (h, w) float64 meters, <=0 or non-finite = invalid
    detections: tuple[Detection, ...]

    def __post_init__(self):
        if self.lane_mask.shape != self.depth.shape:
            raise ValueError(
                f"mask {self.lane_mask.shape} and depth {self.depth.shape} dimensions differ"
            )


def detection_to_list(det: Detection) -> list:
    b = det.bbox
    return [b.x_min, b.y_min, b.x_max, b.y_max, det.label, det.confidence]


def detection_from_list(raw, name: str = "detection") -> Detection:
    try:
        x0, y0, x1, y1, label, conf = raw
        return Detection(
            bbox=BoundingBox(int(x0), int(y0), int(x1), int(y1)),
            label=str(label),
            confidence=float(conf),
        )
    except (TypeError, ValueError) as exc:
        raise FrameCodecError(f"{name}: malformed detection {raw!r}: {exc}") from exc


def encode_frame(bundle: FrameBundle) -> bytes:
    """Serialize one bundle: JSON header + PGM mask + PGM depth, length-prefixed."""
    header = json.dumps(
        {
            "seq": bundle.seq,
            "timestamp_ns": bundle.timestamp_ns,
            "detections": [detection_to_list(d) for d in bundle.detections],
        },
        sort_keys=True,
    ).encode("utf-8")
    mask = mask_to_pgm_bytes(bundle.lane_mask)
    depth = depth_to_pgm_bytes(bundle.depth, "frame depth")
    return b"".join(
        (_U32.pack(len(header)), header, _U32.pack(len(mask)), mask, _U32.pack(len(depth)), depth)
    )


def encode_stream_end() -> bytes:
    header = json.dumps({"end": True}, sort_keys=True).encode("utf-8")
    return b"".join((_U32.pack(len(header)), header, _U32.pack(0), _U32.pack(0)))


def _take(data: bytes, offset: int, what: str) -> tuple[bytes, int]:
    if offset + _U32.size > len(data):
        raise FrameCodecError(f"frame payload: truncated before {what} length")
    (length,) = _U32.unpack_from(data, offset)
    offset += _U32.size
    if offset + length > len(data):
        raise FrameCodecError(f"frame payload: truncated {what} ({length} bytes declared)")
    return data[offset : offset + length], offset + length


def decode_frame(payload: bytes) -> FrameBundle | None:
    """Decode a frame payload; None signals end-of-stream."""
    header_bytes, offset = _take(payload, 0, "header")
    try:
        header = json.loads(header_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FrameCodecError(f"frame payload: invalid header JSON: {exc}") from exc
    if header.get("end"):
        return None
    mask_bytes, offset = _take(payload, offset, "mask")
    depth_bytes, offset = _take(payload, offset, "depth")
    if offset != len(payload):
        raise FrameCodecError(f"frame payload: {len(payload) - offset} trailing bytes")
    try:
        seq = int(header["seq"])
        timestamp_ns = int(header["timestamp_ns"])
        detections = tuple(
            detection_from_list(raw, f"frame {seq}") for raw in header.get("detections", [])
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FrameCodecError(f"frame payload: malformed header fields: {exc}") from exc
    mask = mask_from_pgm_bytes(mask_bytes, "frame mask")
    depth = depth_from_pgm_bytes(depth_bytes, "frame depth")
    return FrameBundle(
        seq=seq,
        timestamp_ns=timestamp_ns,
        lane_mask=mask,
        depth=depth,
        detections=detections,
    )
