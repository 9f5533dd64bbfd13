import dataclasses

import numpy as np
import pytest

from wzwarn.bus import Envelope, InProcessBus, LOSSLESS
from wzwarn.config import AppConfig, PipelineConfig
from wzwarn.frames import LED_TOPIC, FrameBundle
from wzwarn.geometry import BoundingBox, LaneAssignment
from wzwarn.pipeline import (
    LED_OFF,
    LED_ON,
    LedNode,
    TrackerState,
    led_payload,
    process_frame,
    run_inprocess,
    telemetry_payload,
)
from wzwarn.sim import generate_frame, run_scenario

from conftest import fast_app, fast_scenario


def env(payload, seq=0, ts=0):
    return Envelope(topic=LED_TOPIC, seq=seq, timestamp_ns=ts, payload=payload)


def first_frames(cfg, n):
    out = []
    for pair in run_scenario(cfg):
        out.append(pair)
        if len(out) == n:
            break
    return out


# --- process_frame -------------------------------------------------------------


def test_same_lane_vehicle_close_warns(app):
    cfg = fast_scenario(initial_distance_m=0.29, duration_s=0.5)
    bundle, truth = next(iter(run_scenario(cfg)))
    report, _ = process_frame(bundle, TrackerState(), app.pipeline)
    assert report.lane_assignments == (LaneAssignment.RIGHT,)
    assert report.distance_m == pytest.approx(truth.distance_m, abs=1e-9)
    assert report.decision is not None and report.decision.warn
    assert led_payload(report) == LED_ON


def test_other_lane_vehicle_not_ranged(app):
    cfg = fast_scenario(target_lane="left", initial_distance_m=0.29, duration_s=0.5)
    bundle, _ = next(iter(run_scenario(cfg)))
    report, _ = process_frame(bundle, TrackerState(), app.pipeline)
    assert report.lane_assignments == (LaneAssignment.LEFT,)
    assert report.distance_m is None
    assert report.decision is None  # proximity mode with no distance
    assert led_payload(report) == LED_OFF


def test_empty_detections_degenerate(app):
    cfg = fast_scenario()
    bundle, _ = next(iter(run_scenario(cfg)))
    empty = FrameBundle(
        seq=bundle.seq,
        timestamp_ns=bundle.timestamp_ns,
        lane_mask=bundle.lane_mask,
        depth=np.zeros_like(bundle.depth),
        detections=(),
    )
    report, _ = process_frame(empty, TrackerState(), app.pipeline)
    assert report.lane_assignments == ()
    assert report.distance_m is None and report.speed_mps is None
    assert report.decision is None


def test_field_mode_degenerate_has_false_decision(app):
    pipeline = dataclasses.replace(app.pipeline, mode="field_continuous")
    cfg = fast_scenario()
    bundle, _ = next(iter(run_scenario(cfg)))
    empty = FrameBundle(
        seq=0, timestamp_ns=0, lane_mask=bundle.lane_mask,
        depth=np.zeros_like(bundle.depth), detections=(),
    )
    report, _ = process_frame(empty, TrackerState(), pipeline)
    assert report.decision is not None
    assert not report.decision.warn
    assert "no tracked target" in report.decision.reason


def test_unknown_lane_fail_safe_still_warns(app):
    # an absurd area threshold blinds the lane labeler; the detection must
    # still be ranged and allowed to warn
    pipeline = dataclasses.replace(app.pipeline, min_component_area=10_000_000)
    cfg = fast_scenario(initial_distance_m=0.29, duration_s=0.5)
    bundle, _ = next(iter(run_scenario(cfg)))
    report, _ = process_frame(bundle, TrackerState(), pipeline)
    assert report.lane_assignments == (LaneAssignment.UNKNOWN,)
    assert report.distance_m is not None
    assert report.decision.warn


def test_speed_chain_over_frames(app):
    cfg = fast_scenario(initial_distance_m=2.0, relative_speed_mps=-0.2)
    state = TrackerState()
    speeds = []
    for bundle, _ in first_frames(cfg, 5):
        report, state = process_frame(bundle, state, app.pipeline)
        speeds.append(report.speed_mps)
    assert speeds[0] is None  # warmup
    for speed in speeds[1:]:
        assert speed == pytest.approx(-0.2, abs=1e-9)


def test_speed_baseline_window(app):
    pipeline = dataclasses.replace(app.pipeline, speed_baseline_frames=3)
    cfg = fast_scenario(initial_distance_m=2.0, relative_speed_mps=-0.2)
    state = TrackerState()
    speeds = []
    for bundle, _ in first_frames(cfg, 6):
        report, state = process_frame(bundle, state, pipeline)
        speeds.append(report.speed_mps)
    assert speeds[:3] == [None, None, None]
    for speed in speeds[3:]:
        assert speed == pytest.approx(-0.2, abs=1e-9)


def test_target_switch_resets_speed_chain(app):
    cfg = fast_scenario(initial_distance_m=2.0)
    frames = first_frames(cfg, 3)
    state = TrackerState()
    report, state = process_frame(frames[0][0], state, app.pipeline)
    # teleport the target: same geometry, depth suddenly 40 m farther
    bundle = frames[1][0]
    jumped = FrameBundle(
        seq=bundle.seq, timestamp_ns=bundle.timestamp_ns, lane_mask=bundle.lane_mask,
        depth=np.where(bundle.depth > 0, bundle.depth + 40.0, 0.0),
        detections=bundle.detections,
    )
    report, state = process_frame(jumped, state, app.pipeline)
    assert report.speed_mps is None  # outlier consumed, chain reset
    report, state = process_frame(frames[2][0], state, app.pipeline)
    # next estimate differences against the post-reset sample
    assert report.speed_mps is not None


def test_debounce_delays_warning(app):
    pipeline = dataclasses.replace(app.pipeline, debounce_frames=3)
    cfg = fast_scenario(initial_distance_m=0.45, relative_speed_mps=-0.2, duration_s=2.0)
    state = TrackerState()
    warns = []
    for bundle, truth in run_scenario(cfg):
        report, state = process_frame(bundle, state, pipeline)
        warns.append((truth.distance_m, report.decision.warn if report.decision else None))
    crossing = next(i for i, (d, _) in enumerate(warns) if d < 0.3)
    assert [w for _, w in warns[crossing : crossing + 3]] == [False, False, True]


def test_decision_determinism(app):
    cfg = fast_scenario(noise_sigma0_m=0.01, duration_s=1.0)
    runs = []
    for _ in range(2):
        state = TrackerState()
        payloads = []
        for bundle, _ in run_scenario(cfg):
            report, state = process_frame(bundle, state, app.pipeline)
            payloads.append(telemetry_payload(report))
        runs.append(payloads)
    assert runs[0] == runs[1]


def test_telemetry_excludes_latency(app):
    cfg = fast_scenario(duration_s=0.5)
    bundle, _ = next(iter(run_scenario(cfg)))
    report, _ = process_frame(bundle, TrackerState(), app.pipeline)
    assert report.processing_latency_ns > 0
    assert b"latency" not in telemetry_payload(report)


# --- led node --------------------------------------------------------------------


def test_led_transitions_edge_counting():
    node = LedNode()
    for seq, payload in enumerate([LED_OFF, LED_OFF, LED_ON, LED_OFF]):
        node.consume(env(payload, seq=seq, ts=seq * 10))
    assert len(node.transitions) == 2
    assert node.transitions[0] == (2, 20, True)
    assert node.transitions[1] == (3, 30, False)
    assert not node.state.on
    assert node.state.since_seq == 3


def test_led_malformed_payload_ignored():
    node = LedNode()
    node.consume(env(LED_ON, seq=0))
    node.consume(env(b"", seq=1))
    node.consume(env(b"\x01\x01", seq=2))
    assert node.state.on
    assert node.consumed == 1


def test_led_late_join_retained_state():
    bus = InProcessBus()
    pub = bus.client()
    pub.publish(LED_TOPIC, LED_OFF, 0)
    late = bus.client().subscribe(LED_TOPIC, LOSSLESS)
    node = LedNode()
    node.consume(late.receive(timeout=1))
    assert not node.state.on
    assert node.consumed == 1


# --- in-process graph ---------------------------------------------------------------


def test_inprocess_led_follows_decisions(app):
    cfg = fast_scenario(initial_distance_m=0.51, relative_speed_mps=-0.2, duration_s=3.0)
    run_app = AppConfig(scenario=cfg, pipeline=app.pipeline)
    result = run_inprocess(run_app)
    first_warn = next(r.seq for r in result.reports if r.decision and r.decision.warn)
    assert result.led.consumed == len(result.reports)
    assert result.led.transitions[0][0] == first_warn
    assert result.led.state.on  # still under threshold at scenario end
    assert len(result.telemetry) == len(result.reports)


def test_inprocess_replays_identically(app):
    cfg = fast_scenario(noise_sigma0_m=0.005, duration_s=1.5)
    run_app = AppConfig(scenario=cfg, pipeline=app.pipeline)
    a = run_inprocess(run_app)
    b = run_inprocess(run_app)
    assert a.telemetry == b.telemetry
    assert [r.seq for r in a.reports] == [r.seq for r in b.reports]


def test_pipeline_config_validation():
    with pytest.raises(Exception, match="median_kernel"):
        PipelineConfig(median_kernel=4).validate()
    with pytest.raises(Exception, match="mode"):
        PipelineConfig(mode="nope").validate()
    with pytest.raises(Exception, match="debounce"):
        PipelineConfig(debounce_frames=0).validate()
