"""Per-frame orchestration: the perception node that turns one FrameBundle
into a warning decision, the LED node that mirrors the decision stream, and
the node roles that wire both over the bus.

The full chain per frame: median-blur the lane mask, extract components, fit
lane lines, label them, assign each detection to a lane, range the nearest
same-lane (or unknown-lane, as a fail-safe) detection, difference consecutive
ranges into a closing speed, and evaluate the warning rule. Everything is
deterministic given (frame, tracker state, config); timestamps come from the
frames, never from the wall clock.

The decision for frame k is always published before frame k+1 is consumed;
there is no pipelining across frames.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, replace

from . import safety
from .bus import LOSSLESS, Envelope, InProcessBus
from .config import AppConfig, PipelineConfig, ScenarioConfig
from .frames import (
    FRAME_TOPIC,
    LED_TOPIC,
    TELEMETRY_TOPIC,
    FrameBundle,
    GroundTruth,
    decode_frame,
    encode_frame,
    encode_stream_end,
)
from .geometry import (
    DegenerateComponentError,
    LaneAssignment,
    connected_components,
    fit_lane_line,
    label_lanes,
    assign_lane,
    median_blur,
)
from .ranging import (
    Candidate,
    ClockOrderError,
    NoRangeError,
    RangeSample,
    SpeedOutlierError,
    estimate_distance,
    estimate_speed,
    track_target,
)
from .recording import RecordingWriter
from .sim import run_scenario

log = logging.getLogger("wzwarn.pipeline")

LED_ON = b"\x01"
LED_OFF = b"\x00"


@dataclass(frozen=True)
class TrackerState:
    """Single-owner tracker state threaded through process_frame calls."""

    samples: tuple[RangeSample, ...] = ()
    consecutive_warn: int = 0


@dataclass(frozen=True)
class ProcessReport:
    """Outcome of one frame: lane per detection, tracked range/speed, decision.

    ``decision`` is None only in proximity mode when no distance was measured.
    ``processing_latency_ns`` is wall-clock and is excluded from the telemetry
    encoding so identical inputs yield byte-identical telemetry.
    """

    seq: int
    timestamp_ns: int
    lane_assignments: tuple[LaneAssignment, ...]
    distance_m: float | None
    speed_mps: float | None
    decision: safety.WarningDecision | None
    processing_latency_ns: int


def process_frame(
    frame: FrameBundle, state: TrackerState, cfg: PipelineConfig
) -> tuple[ProcessReport, TrackerState]:
    """Run the perception chain on one frame; pure in everything but latency."""
    t0 = time.perf_counter_ns()
    height = frame.lane_mask.shape[0]

    blurred = median_blur(frame.lane_mask, cfg.median_kernel)
    components = connected_components(blurred, cfg.min_component_area)
    lines = []
    for component in components:
        try:
            lines.append(fit_lane_line(component))
        except DegenerateComponentError:
            continue
    lanes = label_lanes(lines, height)

    monitored = LaneAssignment(cfg.monitored_lane)
    assignments = tuple(
        assign_lane(det.bbox, lanes) if lanes is not None else LaneAssignment.UNKNOWN
        for det in frame.detections
    )

    # other-lane vehicles are never ranged; unknown lanes are ranged as a
    # fail-safe so a blind frame still fails toward warning
    candidates = []
    for idx, (det, lane) in enumerate(zip(frame.detections, assignments)):
        if lane is not monitored and lane is not LaneAssignment.UNKNOWN:
            continue
        try:
            sample = estimate_distance(
                frame.depth, det.bbox, frame.timestamp_ns, cfg.central_fraction
            )
        except NoRangeError:
            continue
        candidates.append(Candidate(index=idx, lane=lane, sample=sample))
    chosen = track_target(candidates, monitored)

    samples = state.samples
    distance = None
    speed = None
    if chosen is not None:
        distance = chosen.sample.distance_m
        if len(samples) >= cfg.speed_baseline_frames:
            baseline = samples[-cfg.speed_baseline_frames]
            try:
                estimate = estimate_speed(baseline, chosen.sample, cfg.max_plausible_speed_mps)
                speed = estimate.speed_mps
                samples = (samples + (chosen.sample,))[-cfg.speed_baseline_frames :]
            except (SpeedOutlierError, ClockOrderError) as exc:
                log.debug("speed chain reset at seq %d: %s", frame.seq, exc)
                samples = (chosen.sample,)
        else:
            samples = (samples + (chosen.sample,))[-cfg.speed_baseline_frames :]

    decision = None
    if distance is not None:
        if cfg.mode == safety.MODE_SIM:
            decision = safety.should_warn(
                distance, speed if speed is not None else 0.0, cfg.mode,
                cfg.sim_threshold_m, cfg.ssd_params,
            )
        elif speed is not None:
            decision = safety.should_warn(
                distance, speed, cfg.mode, cfg.sim_threshold_m, cfg.ssd_params
            )
        else:
            decision = safety.WarningDecision(
                warn=False, mode=cfg.mode, threshold_m=None, distance_m=distance,
                closing_speed_mps=None, reason="awaiting speed estimate",
            )
    elif cfg.mode != safety.MODE_SIM:
        decision = safety.WarningDecision(
            warn=False, mode=cfg.mode, threshold_m=None, distance_m=None,
            closing_speed_mps=None, reason="no tracked target in monitored lane",
        )

    consecutive = state.consecutive_warn + 1 if decision is not None and decision.warn else 0
    if decision is not None and decision.warn and consecutive < cfg.debounce_frames:
        decision = replace(
            decision,
            warn=False,
            reason=decision.reason + f" (debounce {consecutive}/{cfg.debounce_frames})",
        )

    report = ProcessReport(
        seq=frame.seq,
        timestamp_ns=frame.timestamp_ns,
        lane_assignments=assignments,
        distance_m=distance,
        speed_mps=speed,
        decision=decision,
        processing_latency_ns=time.perf_counter_ns() - t0,
    )
    return report, TrackerState(samples=samples, consecutive_warn=consecutive)


def telemetry_payload(report: ProcessReport) -> bytes:
    """Structured-text telemetry record; deterministic, latency excluded."""
    decision = report.decision
    record = {
        "seq": report.seq,
        "timestamp_ns": report.timestamp_ns,
        "lanes": [lane.value for lane in report.lane_assignments],
        "distance_m": report.distance_m,
        "speed_mps": report.speed_mps,
        "warn": bool(decision.warn) if decision is not None else False,
        "mode": decision.mode if decision is not None else None,
        "threshold_m": decision.threshold_m if decision is not None else None,
        "closing_speed_mps": decision.closing_speed_mps if decision is not None else None,
        "reason": decision.reason if decision is not None else None,
    }
    return json.dumps(record, sort_keys=True).encode("utf-8")


def led_payload(report: ProcessReport) -> bytes:
    warn = report.decision is not None and report.decision.warn
    return LED_ON if warn else LED_OFF


@dataclass(frozen=True)
class LedState:
    """Mirror of the last consumed "/led/status" payload."""

    on: bool = False
    since_seq: int | None = None


class LedNode:
    """Consumes "/led/status" and folds it into an LedState, logging transitions."""

    def __init__(self):
        self.state = LedState()
        self.transitions: list[tuple[int, int, bool]] = []
        self.consumed = 0

    def consume(self, env: Envelope) -> None:
        if len(env.payload) != 1:
            log.warning("led: ignoring malformed payload of %d bytes at seq %d",
                        len(env.payload), env.seq)
            return
        self.consumed += 1
        on = env.payload[0] != 0
        if on != self.state.on:
            self.transitions.append((env.seq, env.timestamp_ns, on))
            log.info("led %s at seq %d (t=%d ns)", "ON" if on else "OFF", env.seq, env.timestamp_ns)
            self.state = LedState(on=on, since_seq=env.seq)


class PerceptionSession:
    """Shared perception loop body: process one frame, publish decision + telemetry."""

    def __init__(self, client, cfg: PipelineConfig):
        self.client = client
        self.cfg = cfg
        self.state = TrackerState()
        self.reports: list[ProcessReport] = []
        self.telemetry: list[bytes] = []

    def handle(self, frame: FrameBundle) -> ProcessReport:
        report, self.state = process_frame(frame, self.state, self.cfg)
        self.client.publish(LED_TOPIC, led_payload(report), frame.timestamp_ns)
        record = telemetry_payload(report)
        self.client.publish(TELEMETRY_TOPIC, record, frame.timestamp_ns)
        self.reports.append(report)
        self.telemetry.append(record)
        return report


@dataclass
class GraphResult:
    """Everything an in-process run produces, for reporting and assertions."""

    reports: list[ProcessReport]
    truths: list[GroundTruth]
    telemetry: list[bytes]
    led: LedNode


def run_inprocess(
    app: AppConfig,
    frames=None,
    record_dir: str | None = None,
) -> GraphResult:
    """Run the single-node deployment: perception consumes frames directly and
    publishes its decision and telemetry streams over an in-process bus, where
    the LED node and the telemetry collector subscribe.

    Frames default to the configured scenario. The pump is single-threaded
    and strictly frame-by-frame, so the decision for frame k is published and
    consumed before frame k+1 enters the graph. Frame payload encoding is a
    transport concern and only happens in the distributed roles; that keeps
    this path the reference for any transport to be equivalent against.
    """
    bus = InProcessBus()
    perception_client = bus.client()
    led_client = bus.client()
    collector = bus.client()

    led_sub = led_client.subscribe(LED_TOPIC, LOSSLESS)
    telemetry_sub = collector.subscribe(TELEMETRY_TOPIC, LOSSLESS)

    session = PerceptionSession(perception_client, app.pipeline)
    led_node = LedNode()
    truths: list[GroundTruth] = []
    telemetry: list[bytes] = []

    writer = RecordingWriter(record_dir, app.scenario) if record_dir is not None else None
    source = frames if frames is not None else run_scenario(app.scenario)
    for frame, truth in source:
        if writer is not None:
            writer.add_frame(frame, truth)
        truths.append(truth)
        session.handle(frame)
        while (led_env := led_sub.receive(timeout=0)) is not None:
            led_node.consume(led_env)
        while (tel_env := telemetry_sub.receive(timeout=0)) is not None:
            telemetry.append(tel_env.payload)
    if writer is not None:
        writer.finalize()
    return GraphResult(
        reports=session.reports, truths=truths, telemetry=telemetry, led=led_node
    )


def run_replay(frames, pipeline_cfg: PipelineConfig) -> GraphResult:
    """Feed recorded (frame, truth) pairs through the same in-process graph."""
    app = AppConfig(scenario=ScenarioConfig(), pipeline=pipeline_cfg)
    return run_inprocess(app, frames=frames)


def run_sensor_role(client, scenario: ScenarioConfig, record_dir: str | None = None) -> int:
    """Publish every scenario frame on "/camera/frame", then the end-of-stream mark."""
    writer = RecordingWriter(record_dir, scenario) if record_dir is not None else None
    count = 0
    for frame, truth in run_scenario(scenario):
        if writer is not None:
            writer.add_frame(frame, truth)
        client.publish(FRAME_TOPIC, encode_frame(frame), frame.timestamp_ns)
        count += 1
    last_ts = 0 if count == 0 else frame.timestamp_ns
    client.publish(FRAME_TOPIC, encode_stream_end(), last_ts)
    if writer is not None:
        writer.finalize()
    log.info("sensor: published %d frames", count)
    return count


def run_perception_role(client, cfg: PipelineConfig) -> PerceptionSession:
    """Consume frames until end-of-stream, processing each fully before the next."""
    sub = client.subscribe(FRAME_TOPIC, LOSSLESS)
    session = PerceptionSession(client, cfg)
    for env in sub:
        bundle = decode_frame(env.payload)
        if bundle is None:
            break
        session.handle(bundle)
    log.info("perception: processed %d frames", len(session.reports))
    return session


def run_led_role(client, exit_after_idle_s: float | None = None) -> LedNode:
    """Consume "/led/status" into an LedState until closed or idle for the given time."""
    sub = client.subscribe(LED_TOPIC, LOSSLESS)
    node = LedNode()
    while True:
        env = sub.receive(timeout=exit_after_idle_s)
        if env is None:
            if sub.closed or exit_after_idle_s is not None:
                break
            continue
        node.consume(env)
    log.info("led: consumed %d envelopes, %d transitions, state %s",
             node.consumed, len(node.transitions), "ON" if node.state.on else "OFF")
    return node
