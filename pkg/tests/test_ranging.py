import numpy as np
import pytest

from wzwarn.geometry import BoundingBox, LaneAssignment, PgmFormatError
from wzwarn.ranging import (
    Candidate,
    ClockOrderError,
    NoRangeError,
    RangeSample,
    SpeedOutlierError,
    central_region,
    estimate_distance,
    estimate_speed,
    read_depth_pgm,
    track_target,
    write_depth_pgm,
)


# --- central region ----------------------------------------------------------


def test_central_region_thirds():
    region = central_region(BoundingBox(0, 0, 90, 90))
    assert region == BoundingBox(30, 30, 60, 60)


def test_central_region_minimum_one_pixel():
    region = central_region(BoundingBox(10, 20, 13, 23))
    assert region == BoundingBox(11, 21, 12, 22)
    assert region.width == 1 and region.height == 1


def test_central_region_rectangular():
    # thirds of a 120x60 box, centered: within a pixel of (140,220,180,240)
    region = central_region(BoundingBox(100, 200, 220, 260))
    assert abs(region.x_min - 140) <= 1 and abs(region.x_max - 180) <= 1
    assert abs(region.y_min - 220) <= 1 and abs(region.y_max - 240) <= 1


def test_central_region_fraction_validation():
    with pytest.raises(ValueError):
        central_region(BoundingBox(0, 0, 9, 9), fraction=0.0)
    with pytest.raises(ValueError):
        central_region(BoundingBox(0, 0, 9, 9), fraction=1.5)


# --- distance ----------------------------------------------------------------


def depth_image(h=90, w=90, value=0.0):
    return np.full((h, w), value, dtype=np.float64)


def test_distance_uniform_region():
    depth = depth_image(value=2.5)
    sample = estimate_distance(depth, BoundingBox(0, 0, 90, 90), timestamp_ns=5)
    assert sample.distance_m == pytest.approx(2.5)
    assert sample.valid_pixel_count == 900  # 30x30 central region
    assert sample.timestamp_ns == 5


def test_distance_ignores_invalid_pixels():
    depth = depth_image(value=2.0)
    depth[:, 45:] = 0.0  # right half of the region invalid
    sample = estimate_distance(depth, BoundingBox(0, 0, 90, 90))
    assert sample.distance_m == pytest.approx(2.0)
    assert sample.valid_pixel_count == 450


def test_distance_linear_ramp_matches_analytic_mean():
    depth = depth_image(h=30, w=120)
    ramp = np.linspace(1.0, 2.0, 40)
    depth[10:20, 40:80] = ramp[np.newaxis, :]
    sample = estimate_distance(depth, BoundingBox(0, 0, 120, 30))
    assert abs(sample.distance_m - ramp.mean()) < 1e-6
    assert abs(sample.distance_m - 1.5) < 1e-6


def test_distance_permutation_invariant():
    rng = np.random.default_rng(12)
    depth = depth_image(value=0.0)
    values = rng.uniform(0.5, 5.0, size=(30, 30))
    depth[30:60, 30:60] = values
    base = estimate_distance(depth, BoundingBox(0, 0, 90, 90))
    shuffled = values.ravel()
    rng.shuffle(shuffled)
    depth[30:60, 30:60] = shuffled.reshape(30, 30)
    assert estimate_distance(depth, BoundingBox(0, 0, 90, 90)).distance_m == pytest.approx(
        base.distance_m
    )


def test_distance_no_valid_pixels():
    with pytest.raises(NoRangeError):
        estimate_distance(depth_image(value=0.0), BoundingBox(0, 0, 90, 90))
    nan_depth = depth_image(value=np.nan)
    with pytest.raises(NoRangeError):
        estimate_distance(nan_depth, BoundingBox(0, 0, 90, 90))


# --- speed -------------------------------------------------------------------


def s(distance, t_ns, count=10):
    return RangeSample(distance_m=distance, timestamp_ns=t_ns, valid_pixel_count=count)


def test_speed_approaching_tenth_mps():
    est = estimate_speed(s(5.0, 0), s(4.9, 1_000_000_000))
    assert est.speed_mps == pytest.approx(-0.1)
    assert est.baseline_ns == 1_000_000_000


def test_speed_zero_when_distance_constant():
    assert estimate_speed(s(3.0, 0), s(3.0, 500_000_000)).speed_mps == 0.0


def test_speed_receding_positive():
    est = estimate_speed(s(4.9, 0), s(5.0, 500_000_000))
    assert est.speed_mps == pytest.approx(0.2)


def test_speed_clock_errors():
    with pytest.raises(ClockOrderError):
        estimate_speed(s(5.0, 10), s(4.9, 10))
    with pytest.raises(ClockOrderError):
        estimate_speed(s(5.0, 10), s(4.9, 5))


def test_speed_outlier_signals_target_switch():
    with pytest.raises(SpeedOutlierError):
        estimate_speed(s(50.0, 0), s(3.0, 100_000_000))  # 470 m/s jump


def test_speed_antisymmetry():
    rng = np.random.default_rng(2)
    for _ in range(100):
        d0, d1 = rng.uniform(0.5, 50, size=2)
        dt = int(rng.integers(1_000_000, 2_000_000_000))
        forward = estimate_speed(s(d0, 0), s(d1, dt), max_plausible_mps=1e9)
        backward = estimate_speed(s(d1, 0), s(d0, dt), max_plausible_mps=1e9)
        assert forward.speed_mps == pytest.approx(-backward.speed_mps)


def test_speed_exact_for_noise_free_linear_motion():
    rng = np.random.default_rng(7)
    for _ in range(50):
        v = float(rng.uniform(-30, 30))
        rate = float(rng.uniform(1, 120))
        d0 = float(rng.uniform(5, 500))
        dt_ns = int(round(1e9 / rate))
        prev = s(d0, 0)
        for k in range(1, 20):
            curr = s(d0 + v * (k * dt_ns / 1e9), k * dt_ns)
            est = estimate_speed(prev, curr, max_plausible_mps=1e9)
            assert est.speed_mps == pytest.approx(v, rel=1e-9, abs=1e-12)
            prev = curr


def test_speed_noise_variance_matches_prediction():
    # zero-mean distance noise of std sigma at interval dt gives
    # speed variance 2 sigma^2 / dt^2
    rng = np.random.default_rng(42)
    sigma = 0.005
    dt = 0.1
    n = 10_000
    noise = rng.normal(0.0, sigma, size=n + 1)
    distances = 100.0 + noise  # constant true distance isolates the noise term
    speeds = []
    for k in range(1, n + 1):
        est = estimate_speed(
            s(distances[k - 1], int((k - 1) * dt * 1e9)), s(distances[k], int(k * dt * 1e9))
        )
        speeds.append(est.speed_mps)
    predicted = 2 * sigma**2 / dt**2
    measured = float(np.var(speeds))
    assert predicted / 1.5 <= measured <= predicted * 1.5


# --- target tracking ----------------------------------------------------------


def candidate(i, lane, distance):
    return Candidate(index=i, lane=lane, sample=s(distance, 0))


def test_track_picks_nearest_same_lane():
    chosen = track_target(
        [
            candidate(0, LaneAssignment.RIGHT, 5.0),
            candidate(1, LaneAssignment.RIGHT, 3.0),
        ],
        LaneAssignment.RIGHT,
    )
    assert chosen.index == 1


def test_track_ignores_other_lane_only():
    chosen = track_target(
        [candidate(0, LaneAssignment.LEFT, 1.0)], LaneAssignment.RIGHT
    )
    assert chosen is None
    assert track_target([], LaneAssignment.RIGHT) is None


def test_track_unknown_lane_fail_safe():
    chosen = track_target(
        [candidate(0, LaneAssignment.UNKNOWN, 2.0)], LaneAssignment.RIGHT
    )
    assert chosen is not None and chosen.lane is LaneAssignment.UNKNOWN


# --- depth pgm ----------------------------------------------------------------


def test_depth_pgm_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    depth = rng.uniform(0.1, 60.0, size=(24, 31))
    depth = np.round(depth * 1000) / 1000  # quantized to mm, as the sim emits
    depth[0, :5] = 0.0
    path = tmp_path / "depth.pgm"
    write_depth_pgm(path, depth)
    back = read_depth_pgm(path)
    assert np.array_equal(back, depth)


def test_depth_pgm_range_error(tmp_path):
    depth = np.full((4, 4), 70.0)
    with pytest.raises(PgmFormatError, match="16-bit"):
        write_depth_pgm(tmp_path / "big.pgm", depth)


def test_depth_pgm_wrong_maxval(tmp_path):
    path = tmp_path / "8bit.pgm"
    path.write_bytes(b"P5\n2 2\n255\n" + bytes(4))
    with pytest.raises(PgmFormatError, match="65535"):
        read_depth_pgm(path)
