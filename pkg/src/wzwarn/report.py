"""Run and sweep reports: per-frame rows, summaries, CSV and JSON writers,
and the rendered figures that accompany the delimited output.

Report files are written atomically (temp file + rename) so a failed command
never leaves partial output. All text output is deterministic: floats are
written with repr (shortest round-trip form) and no wall-clock data is
included.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from . import safety
from .config import AppConfig
from .frames import GroundTruth
from .geometry import LaneAssignment
from .pipeline import ProcessReport

RUN_CSV_HEADER = [
    "seq",
    "t_s",
    "lane_est",
    "lane_truth",
    "distance_est_m",
    "distance_truth_m",
    "speed_est_mps",
    "speed_truth_mps",
    "warn",
]

TELEMETRY_CSV_HEADER = [
    "seq",
    "timestamp_ns",
    "lanes",
    "distance_m",
    "speed_mps",
    "warn",
    "mode",
    "threshold_m",
    "closing_speed_mps",
    "reason",
]

SWEEP_SUMMARY_CSV_HEADER = ["set_speed_mps", "mean_speed_mps", "mse", "runs", "frames_scored"]
SWEEP_RUNS_CSV_HEADER = ["set_speed_mps", "run_index", "seed", "mean_speed_mps", "mse", "frames_scored"]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class FrameRow:
    seq: int
    t_s: float
    lane_est: str
    lane_truth: str
    distance_est_m: float | None
    distance_truth_m: float
    speed_est_mps: float | None
    speed_truth_mps: float
    warn: bool


@dataclass(frozen=True)
class RunReport:
    """Per-frame rows plus a summary that is recomputable from the rows."""

    rows: tuple[FrameRow, ...]
    mode: str
    frames: int
    frames_with_speed: int
    mean_speed_mps: float | None
    speed_mse: float | None
    first_warn_seq: int | None
    truth_crossing_seq: int | None


def truth_crossing_seq(truths: list[GroundTruth], app: AppConfig) -> int | None:
    """First frame whose ground-truth distance is under the active threshold."""
    if app.pipeline.mode == safety.MODE_SIM:
        threshold = app.pipeline.sim_threshold_m
    else:
        closing = max(0.0, -app.scenario.relative_speed_mps)
        if closing == 0.0:
            return None
        threshold = safety.warning_threshold_m(closing, app.pipeline.mode, app.pipeline.ssd_params)
    for i, truth in enumerate(truths):
        if truth.distance_m < threshold:
            return i
    return None


def build_run_report(
    reports: list[ProcessReport], truths: list[GroundTruth], app: AppConfig
) -> RunReport:
    if len(reports) != len(truths):
        raise ValueError(f"{len(reports)} reports vs {len(truths)} truths")
    rows = []
    for report, truth in zip(reports, truths):
        lane_est = report.lane_assignments[0].value if report.lane_assignments else ""
        warn = report.decision is not None and report.decision.warn
        rows.append(
            FrameRow(
                seq=report.seq,
                t_s=report.timestamp_ns / 1e9,
                lane_est=lane_est,
                lane_truth=truth.lane,
                distance_est_m=report.distance_m,
                distance_truth_m=truth.distance_m,
                speed_est_mps=report.speed_mps,
                speed_truth_mps=truth.speed_mps,
                warn=warn,
            )
        )
    scored = [(r.speed_est_mps, r.speed_truth_mps) for r in rows if r.speed_est_mps is not None]
    mean_speed = sum(est for est, _ in scored) / len(scored) if scored else None
    mse = sum((est - truth) ** 2 for est, truth in scored) / len(scored) if scored else None
    first_warn = next((r.seq for r in rows if r.warn), None)
    return RunReport(
        rows=tuple(rows),
        mode=app.pipeline.mode,
        frames=len(rows),
        frames_with_speed=len(scored),
        mean_speed_mps=mean_speed,
        speed_mse=mse,
        first_warn_seq=first_warn,
        truth_crossing_seq=truth_crossing_seq(truths, app),
    )


def run_report_csv(report: RunReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RUN_CSV_HEADER)
    for r in report.rows:
        writer.writerow(
            [
                _fmt(r.seq), _fmt(r.t_s), r.lane_est, r.lane_truth,
                _fmt(r.distance_est_m), _fmt(r.distance_truth_m),
                _fmt(r.speed_est_mps), _fmt(r.speed_truth_mps), _fmt(r.warn),
            ]
        )
    return buf.getvalue()


def run_summary_dict(report: RunReport) -> dict:
    return {
        "mode": report.mode,
        "frames": report.frames,
        "frames_with_speed": report.frames_with_speed,
        "mean_speed_mps": report.mean_speed_mps,
        "speed_mse": report.speed_mse,
        "first_warn_seq": report.first_warn_seq,
        "truth_crossing_seq": report.truth_crossing_seq,
    }


def telemetry_csv(telemetry_payloads: list[bytes]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TELEMETRY_CSV_HEADER)
    for payload in telemetry_payloads:
        record = json.loads(payload.decode("utf-8"))
        writer.writerow(
            [
                _fmt(record["seq"]),
                _fmt(record["timestamp_ns"]),
                "|".join(record["lanes"]),
                _fmt(record["distance_m"]),
                _fmt(record["speed_mps"]),
                _fmt(record["warn"]),
                _fmt(record["mode"]),
                _fmt(record["threshold_m"]),
                _fmt(record["closing_speed_mps"]),
                _fmt(record["reason"]),
            ]
        )
    return buf.getvalue()


@dataclass(frozen=True)
class SweepRow:
    """One set-speed: per-run means plus the pooled mean and MSE across runs."""

    set_speed_mps: float
    seeds: tuple[int, ...]
    run_means: tuple[float, ...]
    run_mses: tuple[float, ...]
    run_frames: tuple[int, ...]
    pooled_mean_mps: float
    pooled_mse: float
    frames_scored: int


@dataclass(frozen=True)
class SweepReport:
    rows: tuple[SweepRow, ...]
    runs_per_speed: int
    base_seed: int


def sweep_summary_csv(sweep: SweepReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_SUMMARY_CSV_HEADER)
    for row in sweep.rows:
        writer.writerow(
            [
                _fmt(row.set_speed_mps), _fmt(row.pooled_mean_mps), _fmt(row.pooled_mse),
                _fmt(len(row.run_means)), _fmt(row.frames_scored),
            ]
        )
    return buf.getvalue()


def sweep_runs_csv(sweep: SweepReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_RUNS_CSV_HEADER)
    for row in sweep.rows:
        for i, (seed, mean, mse, frames) in enumerate(
            zip(row.seeds, row.run_means, row.run_mses, row.run_frames)
        ):
            writer.writerow(
                [_fmt(row.set_speed_mps), _fmt(i), _fmt(seed), _fmt(mean), _fmt(mse), _fmt(frames)]
            )
    return buf.getvalue()


def _write_atomic(path: Path, data: str | bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    if isinstance(data, str):
        tmp.write_text(data)
    else:
        tmp.write_bytes(data)
    os.replace(tmp, path)


def render_run_figure(report: RunReport, path: Path) -> None:
    """Distance and speed tracks (estimate vs truth) with warn frames shaded."""
    ts = [r.t_s for r in report.rows]
    fig, (ax_d, ax_v) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    ax_d.plot(ts, [r.distance_truth_m for r in report.rows], label="truth", color="tab:gray")
    ax_d.plot(
        ts,
        [r.distance_est_m if r.distance_est_m is not None else float("nan") for r in report.rows],
        label="estimate", color="tab:blue", linestyle="--",
    )
    warn_ts = [r.t_s for r in report.rows if r.warn]
    if warn_ts:
        ax_d.axvspan(min(warn_ts), max(warn_ts), color="tab:red", alpha=0.15, label="warning")
    ax_d.set_ylabel("distance [m]")
    ax_d.legend(loc="upper right", fontsize=8)
    ax_v.plot(ts, [r.speed_truth_mps for r in report.rows], label="truth", color="tab:gray")
    ax_v.plot(
        ts,
        [r.speed_est_mps if r.speed_est_mps is not None else float("nan") for r in report.rows],
        label="estimate", color="tab:orange", linestyle="--",
    )
    ax_v.set_ylabel("closing speed [m/s]")
    ax_v.set_xlabel("scenario time [s]")
    ax_v.legend(loc="lower right", fontsize=8)
    fig.suptitle(f"run report ({report.mode})")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_sweep_figure(sweep: SweepReport, path: Path) -> None:
    """Measured mean vs set speed, and MSE per set speed."""
    set_speeds = [row.set_speed_mps for row in sweep.rows]
    fig, (ax_m, ax_e) = plt.subplots(1, 2, figsize=(10, 4))
    ax_m.plot(set_speeds, set_speeds, color="tab:gray", label="ideal")
    for row in sweep.rows:
        ax_m.scatter([row.set_speed_mps] * len(row.run_means), row.run_means,
                     color="tab:blue", s=12, alpha=0.6)
    ax_m.scatter(set_speeds, [r.pooled_mean_mps for r in sweep.rows],
                 color="tab:red", marker="x", label="pooled mean")
    ax_m.set_xlabel("set speed [m/s]")
    ax_m.set_ylabel("measured mean speed [m/s]")
    ax_m.legend(fontsize=8)
    ax_e.bar([str(s) for s in set_speeds], [r.pooled_mse for r in sweep.rows], color="tab:orange")
    ax_e.set_xlabel("set speed [m/s]")
    ax_e.set_ylabel("speed MSE [(m/s)^2]")
    fig.suptitle(f"speed sweep ({sweep.runs_per_speed} runs per speed, seed {sweep.base_seed})")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def write_run_outputs(
    report: RunReport,
    telemetry_payloads: list[bytes],
    out_dir: str | Path,
    figures: bool = True,
) -> dict[str, Path]:
    """Write report.csv, summary.json, telemetry.csv (and report.png) into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    # build every artifact before writing anything so failures leave no partial output
    report_text = run_report_csv(report)
    summary_text = json.dumps(run_summary_dict(report), indent=2, sort_keys=True) + "\n"
    telemetry_text = telemetry_csv(telemetry_payloads)
    paths = {
        "report": out / "report.csv",
        "summary": out / "summary.json",
        "telemetry": out / "telemetry.csv",
    }
    _write_atomic(paths["report"], report_text)
    _write_atomic(paths["summary"], summary_text)
    _write_atomic(paths["telemetry"], telemetry_text)
    if figures:
        paths["figure"] = out / "report.png"
        render_run_figure(report, paths["figure"])
    return paths


def write_sweep_outputs(
    sweep: SweepReport, out_dir: str | Path, figures: bool = True
) -> dict[str, Path]:
    """Write sweep_summary.csv and sweep_runs.csv (and sweep.png) into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary_text = sweep_summary_csv(sweep)
    runs_text = sweep_runs_csv(sweep)
    paths = {
        "summary": out / "sweep_summary.csv",
        "runs": out / "sweep_runs.csv",
    }
    _write_atomic(paths["summary"], summary_text)
    _write_atomic(paths["runs"], runs_text)
    if figures:
        paths["figure"] = out / "sweep.png"
        render_sweep_figure(sweep, paths["figure"])
    return paths
