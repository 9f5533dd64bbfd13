"""wzwarn - proactive work-zone collision warning pipeline.

A distributed publish/subscribe pipeline that watches the lane behind a
protective work-zone vehicle: lane-line mask post-processing assigns each
detected vehicle to a lane, depth-image ranging tracks the nearest same-lane
vehicle, finite differencing yields its closing speed, and a stopping-sight-
distance rule (AASHTO Green Book) or a fixed proximity threshold decides when
to flash the warning LEDs. A deterministic synthetic-road simulator stands in
for the camera and neural perception stack so every stage can be scored
against exact ground truth.
"""

from .bus import (
    Broker,
    BusError,
    Envelope,
    EnvelopeDecodeError,
    InProcessBus,
    TcpBusClient,
    TopicQos,
    decode_envelope,
    encode_envelope,
    serve_broker,
)
from .config import AppConfig, ConfigError, PipelineConfig, ScenarioConfig, field_preset, lab_preset, load_config
from .frames import Detection, FrameBundle, GroundTruth, decode_frame, encode_frame
from .geometry import (
    BoundingBox,
    Component,
    LaneAssignment,
    LaneLine,
    LaneSet,
    assign_lane,
    connected_components,
    fit_lane_line,
    label_lanes,
    median_blur,
)
from .pipeline import LedNode, LedState, ProcessReport, TrackerState, process_frame, run_inprocess
from .ranging import (
    RangeSample,
    SpeedEstimate,
    central_region,
    estimate_distance,
    estimate_speed,
    track_target,
)
from .safety import (
    DESIGN_SSD_TABLE_FT,
    SsdParams,
    WarningDecision,
    compute_ssd_ft,
    design_ssd_ft,
    ft_to_m,
    m_to_ft,
    mph_to_mps,
    mps_to_mph,
    should_warn,
)
from .sim import generate_frame, project, run_scenario

__version__ = "0.1.0"
