"""Operator command line: generate | analyze | calibrate | simulate | sweep.

Every subcommand is a thin wrapper over the library modules; no numeric
logic lives here. Exit codes: 0 ok, 1 runtime/invariant failure, 2
config/schema error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from .analysis import AnalysisError, DegenerateTraceError, profile_flow
from .control import CalibrationGrid, CalibrationTable, ControlError, calibrate
from .detection import DetectorConfig, detect
from .engine import (
    MODES,
    FlowConfig,
    NodeParams,
    ScenarioConfig,
    SimReport,
    audit_eq1,
    run,
)
from .queueing import QoSClass
from .trace import (
    ATTACK,
    AttackSpec,
    TraceError,
    TraceSpec,
    read_trace_csv,
    write_trace_csv,
)
from .traffic import GeneratorError, generate_trace, inject_attacks

log = logging.getLogger("fractalqos")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2

_SPEC_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["length", "target_hurst", "mean_rate"],
    "properties": {
        "length": {"type": "integer", "minimum": 1024},
        "target_hurst": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "mean_rate": {"type": "number", "exclusiveMinimum": 0},
        "std_rate": {"type": "number", "minimum": 0},
        "cascade_weight": {
            "type": ["number", "null"],
            "minimum": 0.5,
            "exclusiveMaximum": 1.0,
        },
        "tick_ms": {"type": "number", "exclusiveMinimum": 0},
        "seed": {"type": "integer", "minimum": 0},
    },
}

_ATTACK_SCHEMA = {
    "type": ["object", "null"],
    "additionalProperties": False,
    "properties": {
        "windows": {
            "type": "array",
            "items": {
                "type": "array",
                "items": {"type": "integer", "minimum": 0},
                "minItems": 2,
                "maxItems": 2,
            },
        },
        "intensity_multiplier": {"type": "number", "exclusiveMinimum": 1},
    },
}

_QOS_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["qs", "max_loss", "max_delay_ms"],
    "properties": {
        "qs": {"type": "integer", "minimum": 0},
        "max_loss": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "max_delay_ms": {"type": "number", "exclusiveMinimum": 0},
    },
}

_NODE_PARAMS_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "service_rate": {"type": "number", "minimum": 0},
        "buffer": {"type": "integer", "minimum": 0},
    },
}

_DETECTOR_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "window": {"type": "integer", "minimum": 64},
        "stride": {"type": "integer", "minimum": 1},
        "rate_z_threshold": {"type": "number"},
        "hurst_shift_threshold": {"type": "number"},
    },
}

GENERATE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["spec"],
    "properties": {"spec": _SPEC_SCHEMA, "attack": _ATTACK_SCHEMA},
}

CALIBRATE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["targets"],
    "properties": {
        "targets": {"type": "array", "minItems": 1, "items": _QOS_SCHEMA},
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "h_values": {"type": "array", "items": {"type": "number"}},
                "sigma_values": {"type": "array", "items": {"type": "number"}},
                "rho_values": {"type": "array", "items": {"type": "number"}},
                "trace_length": {"type": "integer", "minimum": 1024},
                "net_ref": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "seeds": {"type": "integer", "minimum": 3},
    },
}

RUN_CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["scenario", "flows"],
    "properties": {
        "scenario": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "topology_path": {"type": ["string", "null"]},
                "calibration_path": {"type": ["string", "null"]},
                "modes": {
                    "type": "array",
                    "minItems": 1,
                    "items": {"enum": list(MODES)},
                },
                "load_ratio": {"type": "number", "minimum": 0.2, "maximum": 0.9},
                "horizon": {"type": "integer", "minimum": 1},
                "route_recalc": {"type": "integer", "minimum": 1},
                "detect_interval": {"type": "integer", "minimum": 1},
                "duration": {"type": "integer", "minimum": 4096},
                "seed": {"type": "integer", "minimum": 0},
                "p_sec_gate": {"type": "number", "minimum": 0, "maximum": 1},
                "cost_scale": {"type": ["number", "null"], "minimum": 0},
                "reference_capacity": {"type": "number", "exclusiveMinimum": 0},
                "tick_ms": {"type": "number", "exclusiveMinimum": 0},
                "node_defaults": _NODE_PARAMS_SCHEMA,
                "node_overrides": {
                    "type": "object",
                    "additionalProperties": _NODE_PARAMS_SCHEMA,
                },
                "detector": _DETECTOR_SCHEMA,
            },
        },
        "flows": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["flow_id", "src", "dst", "spec", "qos"],
                "properties": {
                    "flow_id": {"type": "string"},
                    "src": {"type": "string"},
                    "dst": {"type": "string"},
                    "spec": _SPEC_SCHEMA,
                    "qos": _QOS_SCHEMA,
                    "attack": _ATTACK_SCHEMA,
                    "channel": {"type": ["integer", "null"], "minimum": 0},
                },
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "required": ["loads", "seeds"],
            "properties": {
                "loads": {
                    "type": "array",
                    "minItems": 1,
                    "items": {"type": "number", "minimum": 0.2, "maximum": 0.9},
                },
                "seeds": {
                    "type": "array",
                    "minItems": 1,
                    "items": {"type": "integer", "minimum": 0},
                },
            },
        },
    },
}


class ConfigError(ValueError):
    pass


def _load_json(path: str, schema: dict) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config {path} failed schema validation: {exc.message}")
    return doc


def _check_out(path: str, force: bool) -> None:
    if os.path.exists(path) and not force:
        raise ConfigError(f"output {path} exists; pass --force to overwrite")


def _attack_from_dict(doc: Optional[dict]) -> Optional[AttackSpec]:
    if doc is None:
        return None
    return AttackSpec(
        windows=tuple(tuple(w) for w in doc.get("windows", ())),
        intensity_multiplier=float(doc.get("intensity_multiplier", 10.0)),
    )


def _qos_from_dict(doc: dict) -> QoSClass:
    return QoSClass(
        qs=int(doc["qs"]),
        max_loss=float(doc["max_loss"]),
        max_delay_ms=float(doc["max_delay_ms"]),
    )


def _scenario_from_config(
    doc: dict, config_dir: Path, mode: str, seed: Optional[int] = None
) -> tuple[ScenarioConfig, Optional[CalibrationTable]]:
    sc = doc.get("scenario", {})
    topology = None
    if sc.get("topology_path"):
        with open(config_dir / sc["topology_path"]) as fh:
            topology = json.load(fh)
    calib = None
    if sc.get("calibration_path"):
        calib = CalibrationTable.load(str(config_dir / sc["calibration_path"]))
    else:
        import importlib.resources

        ref = importlib.resources.files("fractalqos.data").joinpath(
            "calibration.json"
        )
        calib = CalibrationTable.from_json(json.loads(ref.read_text()))
    flows = []
    for fdoc in doc["flows"]:
        flows.append(
            FlowConfig(
                flow_id=fdoc["flow_id"],
                src=fdoc["src"],
                dst=fdoc["dst"],
                spec=TraceSpec.from_dict(fdoc["spec"]),
                qos=_qos_from_dict(fdoc["qos"]),
                attack=_attack_from_dict(fdoc.get("attack")),
                channel=fdoc.get("channel"),
            )
        )
    defaults = sc.get("node_defaults", {})
    overrides = {
        node: NodeParams(
            service_rate=float(params.get("service_rate", 60.0)),
            buffer=int(params.get("buffer", 30)),
        )
        for node, params in sc.get("node_overrides", {}).items()
    }
    det = sc.get("detector", {})
    config = ScenarioConfig(
        flows=flows,
        topology=topology,
        method_mode=mode,
        load_ratio=float(sc.get("load_ratio", 0.7)),
        horizon=int(sc.get("horizon", 512)),
        route_recalc=int(sc.get("route_recalc", 1024)),
        detect_interval=int(sc.get("detect_interval", 512)),
        duration=int(sc.get("duration", 8192)),
        seed=int(sc.get("seed", 0)) if seed is None else seed,
        p_sec_gate=float(sc.get("p_sec_gate", 0.6)),
        cost_scale=sc.get("cost_scale"),
        reference_capacity=float(sc.get("reference_capacity", 100.0)),
        node_defaults=NodeParams(
            service_rate=float(defaults.get("service_rate", 60.0)),
            buffer=int(defaults.get("buffer", 30)),
        ),
        node_overrides=overrides,
        detector=DetectorConfig(
            window=int(det.get("window", 256)),
            stride=int(det.get("stride", 64)),
            rate_z_threshold=float(det.get("rate_z_threshold", 3.0)),
            hurst_shift_threshold=float(det.get("hurst_shift_threshold", 0.15)),
        ),
        tick_ms=float(sc.get("tick_ms", 1.0)),
    )
    return config, calib


def _write_report_csv(path: str, reports: list[SimReport]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SimReport.CSV_COLUMNS)
        for report in reports:
            writer.writerow(report.to_row())


def _write_events(path: str, events: list[dict]) -> None:
    with open(path, "w") as fh:
        for event in events:
            fh.write(json.dumps(event, sort_keys=True) + "\n")


# -- subcommands ---------------------------------------------------------


def cmd_generate(args: argparse.Namespace) -> int:
    doc = _load_json(args.config, GENERATE_SCHEMA)
    _check_out(args.out, args.force)
    spec_doc = dict(doc["spec"])
    if args.seed is not None:
        spec_doc["seed"] = args.seed
    spec = TraceSpec.from_dict(spec_doc)
    trace = generate_trace(spec)
    attack = _attack_from_dict(doc.get("attack"))
    if attack is not None:
        trace = inject_attacks(trace, attack)
    write_trace_csv(trace, args.out)
    log.info("wrote %d slots to %s", len(trace), args.out)
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    trace = read_trace_csv(args.trace)
    profile = profile_flow(trace)
    out = profile.to_dict()
    if np.any(trace.labels == ATTACK):
        _, sec = detect(trace, DetectorConfig())
        out["security"] = sec.to_dict()
    json.dump(out, sys.stdout, indent=1, sort_keys=True)
    sys.stdout.write("\n")
    return EXIT_OK


def cmd_calibrate(args: argparse.Namespace) -> int:
    doc = _load_json(args.config, CALIBRATE_SCHEMA)
    _check_out(args.out, args.force)
    targets = [_qos_from_dict(t) for t in doc["targets"]]
    grid_doc = doc.get("grid", {})
    grid = CalibrationGrid(
        h_values=tuple(grid_doc.get("h_values", CalibrationGrid.h_values)),
        sigma_values=tuple(grid_doc.get("sigma_values", CalibrationGrid.sigma_values)),
        rho_values=tuple(grid_doc.get("rho_values", CalibrationGrid.rho_values)),
        trace_length=int(
            grid_doc.get("trace_length", CalibrationGrid.trace_length)
        ),
        net_ref=float(grid_doc.get("net_ref", CalibrationGrid.net_ref)),
    )
    table = calibrate(targets, grid, seeds=int(doc.get("seeds", 5)))
    table.save(args.out)
    log.info("calibration table written to %s", args.out)
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    doc = _load_json(args.config, RUN_CONFIG_SCHEMA)
    config_dir = Path(args.config).resolve().parent
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    modes = doc.get("scenario", {}).get("modes", list(MODES))
    reports = []
    failures = []
    for mode in modes:
        config, calib = _scenario_from_config(doc, config_dir, mode, seed=args.seed)
        report, events = run(config, calib)
        reports.append(report)
        _write_events(str(out_dir / f"events-{mode}.jsonl"), events)
        if mode in ("rm", "both"):
            failures.extend(audit_eq1(report, events))
    _write_report_csv(str(out_dir / "report.csv"), reports)
    for failure in failures:
        print(f"audit failure: {failure}", file=sys.stderr)
    return EXIT_RUNTIME if failures else EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    doc = _load_json(args.config, RUN_CONFIG_SCHEMA)
    if "sweep" not in doc:
        raise ConfigError("sweep subcommand needs a 'sweep' section in the config")
    config_dir = Path(args.config).resolve().parent
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    modes = doc.get("scenario", {}).get("modes", list(MODES))
    loads = doc["sweep"]["loads"]
    seeds = doc["sweep"]["seeds"]
    reports = []
    failures = []
    for load in loads:
        for seed in seeds:
            for mode in modes:
                config, calib = _scenario_from_config(doc, config_dir, mode, seed=seed)
                config.load_ratio = float(load)
                report, events = run(config, calib)
                reports.append(report)
                if mode in ("rm", "both"):
                    failures.extend(audit_eq1(report, events))
    _write_report_csv(str(out_dir / "sweep.csv"), reports)
    if args.emit_plot:
        _emit_plot_series(out_dir, reports, modes, loads)
    for failure in failures:
        print(f"audit failure: {failure}", file=sys.stderr)
    return EXIT_RUNTIME if failures else EXIT_OK


def _emit_plot_series(
    out_dir: Path, reports: list[SimReport], modes: list[str], loads: list[float]
) -> None:
    """Per-load series of seed-averaged utilization and loss, one column
    per mode; shaped for external curve plotting."""
    for metric, fname in (
        ("channel_utilization", "plot_utilization.csv"),
        ("lost_data_pct", "plot_loss.csv"),
    ):
        with open(out_dir / fname, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["load"] + [f"{metric}_{m}" for m in modes])
            for load in loads:
                row = [load]
                for mode in modes:
                    vals = [
                        getattr(r, metric)
                        for r in reports
                        if r.mode == mode and r.load_ratio == load
                    ]
                    row.append(round(float(np.mean(vals)), 6) if vals else "")
                writer.writerow(row)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fractalqos",
        description="Simulation toolkit for security-aware QoS over "
        "self-similar network traffic.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="write a synthetic trace CSV")
    p_gen.add_argument("--config", required=True, help="trace spec JSON file")
    p_gen.add_argument("--out", required=True, help="output CSV path")
    p_gen.add_argument("--seed", type=int, default=None, help="override spec seed")
    p_gen.add_argument("--force", action="store_true", help="overwrite output")
    p_gen.set_defaults(func=cmd_generate)

    p_ana = sub.add_parser("analyze", help="print fractal profile of a trace CSV")
    p_ana.add_argument("trace", help="trace CSV path")
    p_ana.set_defaults(func=cmd_analyze)

    p_cal = sub.add_parser("calibrate", help="build a buffer calibration table")
    p_cal.add_argument("--config", required=True, help="calibration config JSON")
    p_cal.add_argument("--out", required=True, help="output table JSON path")
    p_cal.add_argument("--force", action="store_true", help="overwrite output")
    p_cal.set_defaults(func=cmd_calibrate)

    p_sim = sub.add_parser("simulate", help="run one scenario per configured mode")
    p_sim.add_argument("--config", required=True, help="run config JSON")
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.add_argument("--seed", type=int, default=None, help="override scenario seed")
    p_sim.set_defaults(func=cmd_simulate)

    p_swp = sub.add_parser("sweep", help="run the load x seed x mode grid")
    p_swp.add_argument("--config", required=True, help="run config JSON")
    p_swp.add_argument("--out", required=True, help="output directory")
    p_swp.add_argument(
        "--emit-plot",
        action="store_true",
        help="also write per-load series CSVs for plotting",
    )
    p_swp.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    logging.basicConfig(
        level=os.environ.get("FRACTALQOS_LOG_LEVEL", "WARNING"),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, TraceError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DegenerateTraceError as exc:
        print(f"degenerate-trace: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (AnalysisError, ControlError, GeneratorError, Exception) as exc:
        if isinstance(exc, SystemExit):
            raise
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
