"""Operator command surface.

Subcommands:

- ``sim run``    one scenario through the in-process graph; writes report
                 CSV/JSON, telemetry CSV, and figures.
- ``sim sweep``  a grid of set speeds x runs; writes the evaluation table
                 (set speed, measured mean, MSE) and figures.
- ``replay``     feed a recording back through the pipeline.
- ``ssd``        stopping-sight-distance values and the design table.
- ``bus serve``  run the message broker.
- ``node``       run one distributed role (sensor, perception, led) against a broker.

Exit codes: 0 success, 2 configuration/usage error, 1 runtime error. Failed
commands leave no partial output files.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import report as report_mod
from . import safety
from .bus import BusError, TcpBusClient, serve_broker
from .config import AppConfig, ConfigError, canonical_mode, load_config
from .frames import FrameCodecError
from .geometry import PgmFormatError
from .pipeline import (
    run_inprocess,
    run_led_role,
    run_perception_role,
    run_replay,
    run_sensor_role,
)
from .recording import RecordingError, RecordingReader

log = logging.getLogger("wzwarn.cli")


def _load_app_config(args) -> AppConfig:
    app = load_config(getattr(args, "config", None), preset=getattr(args, "preset", "lab"))
    overrides = {}
    if getattr(args, "mode", None):
        overrides["mode"] = canonical_mode(args.mode)
    if overrides:
        pipeline = dataclasses.replace(app.pipeline, **overrides)
        app = AppConfig(scenario=app.scenario, pipeline=pipeline)
    if getattr(args, "seed", None) is not None:
        app = AppConfig(
            scenario=dataclasses.replace(app.scenario, seed=args.seed), pipeline=app.pipeline
        )
    return app.validate()


def _add_config_flags(parser: argparse.ArgumentParser, with_mode: bool = True) -> None:
    parser.add_argument("--config", help="JSON config file (sections: scenario, pipeline)")
    parser.add_argument("--preset", default="lab", choices=("lab", "field"),
                        help="base preset when no --config is given")
    parser.add_argument("--seed", type=int, default=None, help="override scenario seed")
    if with_mode:
        parser.add_argument("--mode", choices=("sim", "field_continuous", "field_table"),
                            help="warning mode override")


def cmd_sim_run(args) -> int:
    app = _load_app_config(args)
    result = run_inprocess(app, record_dir=args.record)
    run_report = report_mod.build_run_report(result.reports, result.truths, app)
    paths = report_mod.write_run_outputs(
        run_report, result.telemetry, args.out, figures=not args.no_figures
    )
    summary = report_mod.run_summary_dict(run_report)
    print(json.dumps(summary, indent=2, sort_keys=True))
    print(f"report written to {paths['report']}")
    return 0


def cmd_sim_sweep(args) -> int:
    app = _load_app_config(args)
    try:
        speeds = [float(s) for s in args.speeds.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--speeds: expected comma-separated numbers, got {args.speeds!r}")
    if not speeds:
        raise ConfigError("--speeds: at least one speed required")
    if args.runs < 1:
        raise ConfigError("--runs: must be >= 1")
    base_seed = app.scenario.seed
    rows = []
    for i, speed in enumerate(speeds):
        seeds, means, mses, frame_counts = [], [], [], []
        pooled: list[float] = []
        for j in range(args.runs):
            # per-run seeds derive deterministically from the base seed
            seed = base_seed + i * args.runs + j
            scenario = dataclasses.replace(app.scenario, relative_speed_mps=speed, seed=seed)
            run_app = AppConfig(scenario=scenario, pipeline=app.pipeline).validate()
            result = run_inprocess(run_app)
            estimates = [r.speed_mps for r in result.reports if r.speed_mps is not None]
            if not estimates:
                raise RuntimeError(f"sweep run speed={speed} seed={seed} produced no speed estimates")
            seeds.append(seed)
            means.append(sum(estimates) / len(estimates))
            mses.append(sum((e - speed) ** 2 for e in estimates) / len(estimates))
            frame_counts.append(len(estimates))
            pooled.extend(estimates)
        rows.append(
            report_mod.SweepRow(
                set_speed_mps=speed,
                seeds=tuple(seeds),
                run_means=tuple(means),
                run_mses=tuple(mses),
                run_frames=tuple(frame_counts),
                pooled_mean_mps=sum(pooled) / len(pooled),
                pooled_mse=sum((e - speed) ** 2 for e in pooled) / len(pooled),
                frames_scored=len(pooled),
            )
        )
    sweep = report_mod.SweepReport(rows=tuple(rows), runs_per_speed=args.runs, base_seed=base_seed)
    paths = report_mod.write_sweep_outputs(sweep, args.out, figures=not args.no_figures)
    print(report_mod.sweep_summary_csv(sweep), end="")
    print(f"sweep written to {paths['summary']}")
    return 0


def cmd_replay(args) -> int:
    reader = RecordingReader(args.recording)
    app = load_config(args.config, preset=reader.scenario.preset)
    pipeline = app.pipeline
    if args.mode:
        pipeline = dataclasses.replace(pipeline, mode=canonical_mode(args.mode))
    app = AppConfig(scenario=reader.scenario, pipeline=pipeline).validate()
    result = run_replay(reader.frames(), app.pipeline)
    run_report = report_mod.build_run_report(result.reports, result.truths, app)
    report_mod.write_run_outputs(
        run_report, result.telemetry, args.out, figures=not args.no_figures
    )
    print(json.dumps(report_mod.run_summary_dict(run_report), indent=2, sort_keys=True))
    return 0


def _ssd_lines(speed_mph: float, params: safety.SsdParams) -> list[str]:
    continuous_ft = safety.compute_ssd_ft(speed_mph, params)
    lines = [
        f"speed {speed_mph:.1f} mph: continuous ssd {continuous_ft:.2f} ft "
        f"({safety.ft_to_m(continuous_ft):.2f} m)"
    ]
    try:
        table_ft = safety.design_ssd_ft(speed_mph)
        lines.append(
            f"speed {speed_mph:.1f} mph: design table ssd {table_ft:.0f} ft "
            f"({safety.ft_to_m(table_ft):.2f} m)"
        )
    except safety.SsdTableRangeError:
        lines.append(f"speed {speed_mph:.1f} mph: above design table range; continuous value applies")
    except ValueError:
        lines.append("speed 0.0 mph: no table row; continuous value 0.00 ft")
    return lines


def cmd_ssd(args) -> int:
    if args.speed_mph is not None and args.speed_mph < 0:
        raise ConfigError(f"--speed-mph: must be >= 0, got {args.speed_mph}")
    params = safety.SsdParams()
    if args.speed_mph is not None:
        for line in _ssd_lines(args.speed_mph, params):
            print(line)
    if args.table or args.speed_mph is None:
        if args.csv:
            print("design_speed_mph,designed_ssd_ft")
            for speed, ssd in safety.DESIGN_SSD_TABLE_FT:
                print(f"{speed},{ssd}")
        else:
            print(f"{'design speed (mph)':>18}  {'designed ssd (ft)':>17}  {'continuous (ft)':>15}")
            for speed, ssd in safety.DESIGN_SSD_TABLE_FT:
                print(f"{speed:>18}  {ssd:>17}  {safety.compute_ssd_ft(speed, params):>15.2f}")
    return 0


def cmd_bus_serve(args) -> int:
    broker = serve_broker(args.listen)
    print(f"broker listening on {broker.address}", flush=True)
    try:
        broker.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


def cmd_node(args) -> int:
    client = TcpBusClient(args.bus)
    try:
        if args.role == "sensor":
            app = _load_app_config(args)
            run_sensor_role(client, app.scenario, record_dir=args.record)
        elif args.role == "perception":
            app = _load_app_config(args)
            session = run_perception_role(client, app.pipeline)
            if args.out:
                out = Path(args.out)
                out.mkdir(parents=True, exist_ok=True)
                text = report_mod.telemetry_csv(session.telemetry)
                (out / "telemetry.csv").write_text(text)
                print(f"telemetry written to {out / 'telemetry.csv'}")
        elif args.role == "led":
            node = run_led_role(client, exit_after_idle_s=args.exit_after_idle)
            if args.out:
                lines = [
                    f"{seq},{timestamp_ns},{'on' if on else 'off'}"
                    for seq, timestamp_ns, on in node.transitions
                ]
                state = "on" if node.state.on else "off"
                Path(args.out).write_text("\n".join(lines + [f"final,{state}"]) + "\n")
            print(f"led consumed {node.consumed} envelopes, state "
                  f"{'on' if node.state.on else 'off'}")
    finally:
        client.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wzwarn",
        description="Work-zone collision warning pipeline: simulator, pipeline, bus, and reports.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("sim", help="run scenarios")
    sim_sub = sim.add_subparsers(dest="sim_command", required=True)

    run_p = sim_sub.add_parser("run", help="run one scenario and write its report")
    _add_config_flags(run_p)
    run_p.add_argument("--out", required=True, help="output directory for reports")
    run_p.add_argument("--record", help="also record frames to this directory")
    run_p.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    run_p.set_defaults(func=cmd_sim_run)

    sweep_p = sim_sub.add_parser("sweep", help="sweep set speeds and write the evaluation table")
    _add_config_flags(sweep_p)
    sweep_p.add_argument("--speeds", default="-0.1,-0.2,-0.3,-0.4",
                         help="comma-separated set speeds in m/s")
    sweep_p.add_argument("--runs", type=int, default=4, help="runs per speed")
    sweep_p.add_argument("--out", required=True, help="output directory")
    sweep_p.add_argument("--no-figures", action="store_true")
    sweep_p.set_defaults(func=cmd_sim_sweep)

    replay_p = sub.add_parser("replay", help="replay a recording through the pipeline")
    replay_p.add_argument("--recording", required=True, help="recording directory")
    replay_p.add_argument("--config", help="JSON config for the pipeline section")
    replay_p.add_argument("--mode", choices=("sim", "field_continuous", "field_table"))
    replay_p.add_argument("--out", required=True, help="output directory")
    replay_p.add_argument("--no-figures", action="store_true")
    replay_p.set_defaults(func=cmd_replay)

    ssd_p = sub.add_parser("ssd", help="stopping sight distance values and table")
    ssd_p.add_argument("--speed-mph", type=float, default=None)
    ssd_p.add_argument("--table", action="store_true", help="print the full design table")
    ssd_p.add_argument("--csv", action="store_true", help="CSV table output")
    ssd_p.set_defaults(func=cmd_ssd)

    bus_p = sub.add_parser("bus", help="message broker")
    bus_sub = bus_p.add_subparsers(dest="bus_command", required=True)
    serve_p = bus_sub.add_parser("serve", help="run the broker")
    serve_p.add_argument("--listen", default="127.0.0.1:7750", help="host:port to bind")
    serve_p.set_defaults(func=cmd_bus_serve)

    node_p = sub.add_parser("node", help="run one distributed role")
    node_p.add_argument("role", choices=("sensor", "perception", "led"))
    node_p.add_argument("--bus", required=True, help="broker host:port")
    _add_config_flags(node_p)
    node_p.add_argument("--out", help="perception: telemetry dir; led: transitions file")
    node_p.add_argument("--record", help="sensor: record frames to this directory")
    node_p.add_argument("--exit-after-idle", type=float, default=None,
                        help="led: exit after this many idle seconds")
    node_p.set_defaults(func=cmd_node)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (RecordingError, BusError, FrameCodecError, PgmFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
