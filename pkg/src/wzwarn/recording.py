"""Recording directory format: the bit-exact contract between the simulator,
the replay harness, and any future field-capture tooling.

Layout::

    <dir>/manifest            JSON: config echo + per-frame entries
    <dir>/NNNN_mask.pgm       8-bit binary PGM lane mask (nonzero = lane pixel)
    <dir>/NNNN_depth.pgm      16-bit big-endian PGM depth in millimeters (0 = invalid)

Each manifest frame entry carries seq, timestamp_ns, the two file names, the
detections, and the ground truth. The manifest is written atomically at
finalize so a crashed recording never leaves a parsable-but-partial manifest.
"""

from __future__ import annotations

import dataclasses
import json
import os
from collections.abc import Iterator
from pathlib import Path

from .config import ConfigError, ScenarioConfig, _apply_section
from .frames import Detection, FrameBundle, GroundTruth, detection_from_list, detection_to_list
from .geometry import BoundingBox, PgmFormatError, read_mask_pgm, write_mask_pgm
from .ranging import read_depth_pgm, write_depth_pgm

MANIFEST_NAME = "manifest"
FORMAT_TAG = "wzwarn-recording-v1"


class RecordingError(ValueError):
    """Recording directory missing, truncated, or inconsistent."""


def _truth_to_dict(truth: GroundTruth) -> dict:
    return {
        "distance_m": truth.distance_m,
        "speed_mps": truth.speed_mps,
        "lane": truth.lane,
        "bbox": None
        if truth.bbox is None
        else [truth.bbox.x_min, truth.bbox.y_min, truth.bbox.x_max, truth.bbox.y_max],
        "occluded": truth.occluded,
    }


def _truth_from_dict(raw: dict, where: str) -> GroundTruth:
    try:
        bbox = raw["bbox"]
        return GroundTruth(
            distance_m=float(raw["distance_m"]),
            speed_mps=float(raw["speed_mps"]),
            lane=str(raw["lane"]),
            bbox=None if bbox is None else BoundingBox(*(int(v) for v in bbox)),
            occluded=bool(raw.get("occluded", False)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise RecordingError(f"{where}: malformed ground truth: {exc}") from exc


class RecordingWriter:
    """Stream frames to a recording directory; call finalize() to seal it."""

    def __init__(self, directory: str | Path, scenario: ScenarioConfig):
        self.directory = Path(directory)
        self.scenario = scenario
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
            probe = self.directory / ".write-probe"
            probe.write_bytes(b"")
            probe.unlink()
        except OSError as exc:
            raise RecordingError(f"recording path not writable: {self.directory}: {exc}") from exc
        self._frames: list[dict] = []
        self._finalized = False

    def add_frame(self, bundle: FrameBundle, truth: GroundTruth) -> None:
        if self._finalized:
            raise RecordingError("recording already finalized")
        mask_name = f"{bundle.seq:04d}_mask.pgm"
        depth_name = f"{bundle.seq:04d}_depth.pgm"
        write_mask_pgm(self.directory / mask_name, bundle.lane_mask)
        write_depth_pgm(self.directory / depth_name, bundle.depth)
        self._frames.append(
            {
                "seq": bundle.seq,
                "timestamp_ns": bundle.timestamp_ns,
                "mask": mask_name,
                "depth": depth_name,
                "detections": [detection_to_list(d) for d in bundle.detections],
                "truth": _truth_to_dict(truth),
            }
        )

    def finalize(self) -> Path:
        if self._finalized:
            return self.directory / MANIFEST_NAME
        scenario = dataclasses.asdict(self.scenario)
        scenario["lane_offsets_m"] = list(scenario["lane_offsets_m"])
        manifest = {
            "format": FORMAT_TAG,
            "scenario": scenario,
            "frames": self._frames,
        }
        target = self.directory / MANIFEST_NAME
        tmp = self.directory / (MANIFEST_NAME + ".tmp")
        tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        os.replace(tmp, target)
        self._finalized = True
        return target


class RecordingReader:
    """Parse a recording directory and iterate its frames in manifest order."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        manifest_path = self.directory / MANIFEST_NAME
        if not manifest_path.is_file():
            raise RecordingError(f"no manifest in {self.directory}")
        try:
            manifest = json.loads(manifest_path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise RecordingError(f"manifest unreadable or truncated: {manifest_path}: {exc}") from exc
        if not isinstance(manifest, dict) or manifest.get("format") != FORMAT_TAG:
            raise RecordingError(
                f"{manifest_path}: unknown recording format {manifest.get('format')!r}"
            )
        try:
            self.scenario = _apply_section(ScenarioConfig(), "scenario", manifest["scenario"])
            self.scenario.validate()
        except (KeyError, ConfigError) as exc:
            raise RecordingError(f"{manifest_path}: bad scenario echo: {exc}") from exc
        entries = manifest.get("frames")
        if not isinstance(entries, list):
            raise RecordingError(f"{manifest_path}: missing frames list")
        self._entries = entries

    def __len__(self) -> int:
        return len(self._entries)

    def frames(self) -> Iterator[tuple[FrameBundle, GroundTruth]]:
        expected_shape = (self.scenario.image_height, self.scenario.image_width)
        for i, entry in enumerate(self._entries):
            where = f"frame entry {i}"
            try:
                seq = int(entry["seq"])
                timestamp_ns = int(entry["timestamp_ns"])
                mask_name = str(entry["mask"])
                depth_name = str(entry["depth"])
                detections = tuple(
                    detection_from_list(raw, where) for raw in entry.get("detections", [])
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise RecordingError(f"{where}: malformed manifest entry: {exc}") from exc
            try:
                mask = read_mask_pgm(self.directory / mask_name)
                depth = read_depth_pgm(self.directory / depth_name)
            except FileNotFoundError as exc:
                raise RecordingError(f"{where} (seq {seq}): missing file {exc.filename}") from exc
            except PgmFormatError as exc:
                raise RecordingError(f"{where} (seq {seq}): corrupt frame file: {exc}") from exc
            if mask.shape != expected_shape or depth.shape != expected_shape:
                raise RecordingError(
                    f"{where} (seq {seq}): image size {mask.shape[::-1]} does not match "
                    f"manifest {expected_shape[::-1]}"
                )
            truth = _truth_from_dict(entry.get("truth", {}), where)
            yield (
                FrameBundle(
                    seq=seq,
                    timestamp_ns=timestamp_ns,
                    lane_mask=mask,
                    depth=depth,
                    detections=detections,
                ),
                truth,
            )
