"""Stopping-sight-distance computation and the warn/no-warn decision.

The continuous rule uses the AASHTO Green Book level-roadway formula

    SSD_ft = 1.47 * V * t + 1.075 * V^2 / a

with V in mph, brake reaction time t in seconds (2.5 s default) and
deceleration rate a in ft/s^2 (11.2 default). The table rule uses the Green
Book design-speed table, which rounds the formula up to the next 5 ft and is
therefore strictly more conservative.

Three decision modes:

- ``sim_proximity``: warn when the measured distance drops under a fixed
  threshold (0.3 m default), the laboratory-scale rule.
- ``field_continuous``: warn when an approaching target is nearer than the
  formula SSD for its closing speed.
- ``field_table``: same, using the design table (falls back to the formula
  above the table's 80 mph ceiling).

Everything here is pure and thread-safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

MPS_PER_MPH = 0.44704
MPH_PER_MPS = 1.0 / MPS_PER_MPH  # 2.2369362920544...
M_PER_FT = 0.3048
FT_PER_M = 1.0 / M_PER_FT  # 3.2808398950131...

MODE_SIM = "sim_proximity"
MODE_FIELD_CONTINUOUS = "field_continuous"
MODE_FIELD_TABLE = "field_table"
MODES = (MODE_SIM, MODE_FIELD_CONTINUOUS, MODE_FIELD_TABLE)

DEFAULT_SIM_THRESHOLD_M = 0.3

# AASHTO Green Book level-roadway stopping sight distance:
# (design speed mph, designed SSD ft), 15..80 mph in 5 mph steps.
DESIGN_SSD_TABLE_FT: tuple[tuple[int, int], ...] = (
    (15, 80),
    (20, 115),
    (25, 155),
    (30, 200),
    (35, 250),
    (40, 305),
    (45, 360),
    (50, 425),
    (55, 495),
    (60, 570),
    (65, 645),
    (70, 730),
    (75, 820),
    (80, 910),
)
MAX_TABLE_SPEED_MPH = DESIGN_SSD_TABLE_FT[-1][0]


class SsdTableRangeError(ValueError):
    """Speed above the design table's ceiling; use the continuous formula."""


@dataclass(frozen=True)
class SsdParams:
    """Brake reaction time (s) and deceleration rate (ft/s^2)."""

    t_reaction_s: float = 2.5
    a_decel_ftps2: float = 11.2

    def __post_init__(self):
        if not (self.t_reaction_s > 0 and self.a_decel_ftps2 > 0):
            raise ValueError(
                f"reaction time and deceleration must be positive, got {self}"
            )


@dataclass(frozen=True)
class WarningDecision:
    """Outcome of one warning evaluation.

    ``warn == distance_m < threshold_m`` whenever a threshold applies; the
    reason records why (including the closing-speed gate in field modes).
    """

    warn: bool
    mode: str
    threshold_m: float | None
    distance_m: float | None
    closing_speed_mps: float | None
    reason: str


def mps_to_mph(speed_mps: float) -> float:
    _require_finite(speed_mps, "speed")
    return speed_mps * MPH_PER_MPS


def mph_to_mps(speed_mph: float) -> float:
    _require_finite(speed_mph, "speed")
    return speed_mph * MPS_PER_MPH


def m_to_ft(length_m: float) -> float:
    _require_finite(length_m, "length")
    return length_m * FT_PER_M


def ft_to_m(length_ft: float) -> float:
    _require_finite(length_ft, "length")
    return length_ft * M_PER_FT


def _require_finite(value: float, name: str) -> None:
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value}")


def compute_ssd_ft(speed_mph: float, params: SsdParams = SsdParams()) -> float:
    """Continuous stopping sight distance in feet; zero at zero speed."""
    _require_finite(speed_mph, "speed")
    if speed_mph < 0:
        raise ValueError(f"speed must be >= 0 mph, got {speed_mph}")
    return 1.47 * speed_mph * params.t_reaction_s + 1.075 * speed_mph**2 / params.a_decel_ftps2


def design_ssd_ft(design_speed_mph: float) -> float:
    """Designed SSD from the table, rounding the speed up to the next row.

    Conservative by construction: the table value is never below the
    continuous formula at the same speed.
    """
    _require_finite(design_speed_mph, "speed")
    if design_speed_mph <= 0:
        raise ValueError(f"design speed must be > 0 mph, got {design_speed_mph}")
    if design_speed_mph > MAX_TABLE_SPEED_MPH:
        raise SsdTableRangeError(
            f"design speed {design_speed_mph} mph above table ceiling {MAX_TABLE_SPEED_MPH} mph"
        )
    for speed, ssd in DESIGN_SSD_TABLE_FT:
        if design_speed_mph <= speed:
            return float(ssd)
    raise AssertionError("unreachable: ceiling checked above")


def warning_threshold_m(closing_speed_mps: float, mode: str, params: SsdParams = SsdParams()) -> float:
    """Distance threshold in meters for a positive closing speed in a field mode."""
    closing_mph = mps_to_mph(closing_speed_mps)
    if mode == MODE_FIELD_TABLE:
        try:
            return ft_to_m(design_ssd_ft(closing_mph))
        except SsdTableRangeError:
            return ft_to_m(compute_ssd_ft(closing_mph, params))
    return ft_to_m(compute_ssd_ft(closing_mph, params))


def should_warn(
    distance_m: float,
    speed_mps: float,
    mode: str,
    sim_threshold_m: float = DEFAULT_SIM_THRESHOLD_M,
    params: SsdParams = SsdParams(),
) -> WarningDecision:
    """Evaluate the warning rule for one measured distance and speed.

    In field modes only an approaching target (closing speed > 0) can warn;
    stopping distance is meaningless for a receding one.
    """
    if mode not in MODES:
        raise ValueError(f"unknown warning mode {mode!r}; expected one of {MODES}")
    _require_finite(distance_m, "distance")
    if distance_m <= 0:
        raise ValueError(f"distance must be positive, got {distance_m}")
    _require_finite(speed_mps, "speed")

    if mode == MODE_SIM:
        warn = distance_m < sim_threshold_m
        reason = (
            f"distance {distance_m:.3f} m {'<' if warn else '>='} "
            f"proximity threshold {sim_threshold_m:.3f} m"
        )
        return WarningDecision(
            warn=warn,
            mode=mode,
            threshold_m=sim_threshold_m,
            distance_m=distance_m,
            closing_speed_mps=max(0.0, -speed_mps),
            reason=reason,
        )

    closing = max(0.0, -speed_mps)
    if closing == 0.0:
        return WarningDecision(
            warn=False,
            mode=mode,
            threshold_m=None,
            distance_m=distance_m,
            closing_speed_mps=0.0,
            reason=f"target not approaching (speed {speed_mps:+.3f} m/s); no stopping distance applies",
        )
    threshold = warning_threshold_m(closing, mode, params)
    warn = distance_m < threshold
    reason = (
        f"closing {closing:.3f} m/s ({mps_to_mph(closing):.1f} mph): distance "
        f"{distance_m:.2f} m {'<' if warn else '>='} ssd {threshold:.2f} m"
    )
    return WarningDecision(
        warn=warn,
        mode=mode,
        threshold_m=threshold,
        distance_m=distance_m,
        closing_speed_mps=closing,
        reason=reason,
    )
