"""Experiment runner CLI: scenario generation, single runs and sweeps.

Outputs are a results CSV with a fixed column schema plus a JSON manifest
capturing config, seeds and versions; re-running from a manifest must
reproduce the CSV byte for byte. Plotting is left to external tools.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import Optional

from . import __version__
from .experiments import CSV_COLUMNS, PRESET_PIPELINE_DEFAULTS, run_experiment
from .packer import DEParams
from .pipeline import PipelineConfig, worker_count
from .sim import (
    DetectorModel,
    PRESETS,
    Scenario,
    generate_scenario,
    load_scenario,
    save_scenario,
)

SWEEP_COLUMNS = CSV_COLUMNS + ["ps_period_s", "tput_acc"]
DEFAULT_CANVAS_SWEEP = (320, 640, 960)
DEFAULT_PS_SWEEP = (10.0, 30.0, 60.0)


class CliError(Exception):
    pass


def _parse_dims(raw: str) -> tuple[int, int]:
    try:
        w, h = raw.lower().split("x")
        return (int(w), int(h))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected WxH, got {raw!r}") from exc


def _build_scenario(args: argparse.Namespace, config: dict) -> Scenario:
    if getattr(args, "scenario", None):
        return load_scenario(args.scenario)
    preset_name = getattr(args, "preset", None) or config.get("preset")
    if not preset_name:
        raise CliError("either --scenario or --preset is required")
    if preset_name not in PRESETS:
        raise CliError(f"unknown preset {preset_name!r}; choices: {sorted(PRESETS)}")
    kwargs = {}
    if getattr(args, "cameras", None):
        kwargs["n_cameras"] = args.cameras
    if config.get("frame_dims"):
        kwargs["frame_dims"] = tuple(config["frame_dims"])
    if getattr(args, "frame_dims", None):
        kwargs["frame_dims"] = args.frame_dims
    for key in ("fps", "duration_s"):
        if config.get(key) is not None:
            kwargs[key] = config[key]
    if getattr(args, "duration", None):
        kwargs["duration_s"] = args.duration
    spec = PRESETS[preset_name](**kwargs)
    return generate_scenario(spec, args.seed)


def _load_config_file(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise CliError("config file must hold a JSON object")
    return data


def _pipeline_config(
    args: argparse.Namespace, config: dict, fallback_preset: Optional[str] = None
) -> PipelineConfig:
    preset = getattr(args, "preset", None) or config.get("preset") or fallback_preset
    if preset in PRESET_PIPELINE_DEFAULTS:
        config = {**PRESET_PIPELINE_DEFAULTS[preset], **config}
    de_cfg = config.get("de_params", {})
    de = DEParams(
        pop=de_cfg.get("pop"),
        f=de_cfg.get("f", 0.7),
        cr=de_cfg.get("cr", 0.9),
        generations=de_cfg.get("generations", 150),
        seed=de_cfg.get("seed", args.seed),
    )
    fields = {
        f.name: config[f.name]
        for f in dataclasses.fields(PipelineConfig)
        if f.name in config
    }
    fields.pop("de_params", None)
    cfg = PipelineConfig(de_params=de, **fields)
    overrides = {}
    if getattr(args, "cameras", None):
        overrides["cameras"] = args.cameras
    if getattr(args, "batch", None):
        overrides["batch"] = args.batch
    if getattr(args, "canvas", None):
        overrides["canvas_side"] = args.canvas
    if getattr(args, "strict", False):
        overrides["strict"] = True
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    return cfg


def _detector_model(args: argparse.Namespace, config: dict) -> DetectorModel:
    det = config.get("detector", {})
    return DetectorModel(
        h0=det.get("h0", 12.0),
        h1=det.get("h1", 32.0),
        p_max=det.get("p_max", 0.98),
        deterministic=det.get("deterministic", False),
        jitter_frac=det.get("jitter_frac", 0.02),
        seed=det.get("seed", args.seed),
    )


def _write_csv(path: str, columns: list[str], rows: list[dict[str, str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _manifest_payload(args: argparse.Namespace, config: dict, command: str) -> dict:
    return {
        "schema": 1,
        "package": "canvasmux",
        "version": __version__,
        "csv_schema_version": 1,
        "csv_columns": SWEEP_COLUMNS if command == "sweep" else CSV_COLUMNS,
        "command": command,
        "args": {
            "mode": getattr(args, "mode", None),
            "cameras": getattr(args, "cameras", None),
            "batch": getattr(args, "batch", None),
            "canvas": getattr(args, "canvas", None),
            "seed": args.seed,
            "preset": getattr(args, "preset", None),
            "scenario": getattr(args, "scenario", None),
            "strict": getattr(args, "strict", False),
            "duration": getattr(args, "duration", None),
            "axis": getattr(args, "axis", None),
            "frame_dims": list(args.frame_dims) if getattr(args, "frame_dims", None) else None,
        },
        "config": config,
    }


def _args_from_manifest(path: str, out: Optional[str]) -> argparse.Namespace:
    with open(path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    stored = manifest.get("args", {})
    ns = argparse.Namespace(
        mode=stored.get("mode"),
        cameras=stored.get("cameras"),
        batch=stored.get("batch"),
        canvas=stored.get("canvas"),
        seed=stored.get("seed", 0),
        preset=stored.get("preset"),
        scenario=stored.get("scenario"),
        strict=stored.get("strict", False),
        duration=stored.get("duration"),
        axis=stored.get("axis"),
        config=None,
        manifest=None,
        out=out,
        frame_dims=tuple(stored["frame_dims"]) if stored.get("frame_dims") else None,
    )
    ns.inline_config = manifest.get("config", {})
    return ns


def cmd_run(args: argparse.Namespace) -> int:
    config = getattr(args, "inline_config", None)
    if config is None:
        config = _load_config_file(args.config)
    if not args.out:
        raise CliError("--out is required")
    scenario = _build_scenario(args, config)
    cfg = _pipeline_config(args, config, fallback_preset=scenario.preset)
    model = _detector_model(args, config)
    result = run_experiment(scenario, args.mode, cfg, model)
    _write_csv(args.out, CSV_COLUMNS, [result.csv_row(cfg)])
    manifest_path = args.out + ".manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(_manifest_payload(args, config, "run"), fh, indent=2, sort_keys=True)
        fh.write("\n")
    times = sorted(result.stats.construction_times)
    median_ms = 1000.0 * times[len(times) // 2] if times else 0.0
    print(
        f"mode={result.mode} M={result.cameras} map50={result.map50} "
        f"cer={result.mean_cer} per_camera_fps={result.throughput.per_camera_fps:.2f} "
        f"cfps={result.throughput.cfps:.2f} median_construction_ms={median_ms:.1f}"
    )
    print(f"wrote {args.out} and {manifest_path}")
    return 0


def _sweep_one(
    scenario: Scenario,
    mode: str,
    cfg: PipelineConfig,
    model: DetectorModel,
    ps_period: float,
) -> dict[str, str]:
    result = run_experiment(scenario, mode, cfg, model)
    row = result.csv_row(cfg)
    row["ps_period_s"] = f"{ps_period:.1f}"
    tput_acc = (
        "" if result.map50 is None else f"{result.throughput.cfps * result.map50:.4f}"
    )
    row["tput_acc"] = tput_acc
    return row


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _load_config_file(args.config)
    if not args.out:
        raise CliError("--out is required")
    scenario = _build_scenario(args, config)
    base_cfg = _pipeline_config(args, config, fallback_preset=scenario.preset)
    model = _detector_model(args, config)

    jobs: list[tuple[Scenario, str, PipelineConfig, DetectorModel, float]] = []
    if args.axis == "cameras":
        for m in range(1, base_cfg.cameras + 1):
            for mode in ("mosaic", "fcfs", "uniform"):
                cfg = dataclasses.replace(base_cfg, cameras=m)
                jobs.append((scenario, mode, cfg, model, base_cfg.ps_period_s))
    elif args.axis == "canvas":
        for canvas in DEFAULT_CANVAS_SWEEP:
            for mode in ("mosaic", "uniform"):
                cfg = dataclasses.replace(base_cfg, canvas_side=canvas, batch_latency=None)
                jobs.append((scenario, mode, cfg, model, base_cfg.ps_period_s))
    elif args.axis == "ps_period":
        for period in DEFAULT_PS_SWEEP:
            cfg = dataclasses.replace(base_cfg, ps_period_s=period)
            jobs.append((scenario, "mosaic", cfg, model, period))
    else:
        raise CliError(f"unknown sweep axis {args.axis!r}")

    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda j: _sweep_one(*j), jobs))
    else:
        rows = [_sweep_one(*j) for j in jobs]

    _write_csv(args.out, SWEEP_COLUMNS, rows)
    manifest_path = args.out + ".manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(_manifest_payload(args, config, "sweep"), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_scenario_generate(args: argparse.Namespace) -> int:
    config = _load_config_file(args.config)
    if not args.out:
        raise CliError("--out is required")
    scenario = _build_scenario(args, config)
    save_scenario(scenario, args.out)
    n = scenario.n_frames
    print(f"wrote {args.out}: {scenario.n_cameras} cameras x {n} frames")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="canvasmux",
        description="spatially multiplexed multi-camera inference experiments",
    )
    parser.add_argument("--version", action="version", version=f"canvasmux {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--cameras", type=int, default=None, help="streams per canvas (M)")
        p.add_argument("--batch", type=int, default=None, help="inference batch size b")
        p.add_argument("--canvas", type=int, default=None, help="canvas side C in px")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--preset", choices=sorted(PRESETS), default=None)
        p.add_argument("--scenario", default=None, help="scenario JSONL file")
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--out", default=None, help="output CSV path")
        p.add_argument("--strict", action="store_true", help="fail instead of shedding cameras")
        p.add_argument("--duration", type=float, default=None, help="scenario seconds")
        p.add_argument(
            "--frame-dims",
            dest="frame_dims",
            type=_parse_dims,
            default=None,
            metavar="WxH",
            help="override preset frame dimensions, e.g. 960x540",
        )

    run_p = sub.add_parser("run", help="run one mode over a scenario")
    add_common(run_p)
    run_p.add_argument("--mode", choices=("mosaic", "fcfs", "uniform"), default="mosaic")
    run_p.add_argument("--manifest", default=None, help="re-run from a manifest file")
    run_p.set_defaults(func=cmd_run)

    sweep_p = sub.add_parser("sweep", help="tradeoff sweeps over M, canvas size or PS period")
    add_common(sweep_p)
    sweep_p.add_argument(
        "--axis", choices=("cameras", "canvas", "ps_period"), default="cameras"
    )
    sweep_p.set_defaults(func=cmd_sweep)

    scen_p = sub.add_parser("scenario", help="scenario tools")
    scen_sub = scen_p.add_subparsers(dest="scenario_command", required=True)
    gen_p = scen_sub.add_parser("generate", help="generate a synthetic scenario file")
    add_common(gen_p)
    gen_p.set_defaults(func=cmd_scenario_generate)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "manifest", None):
        args = _args_from_manifest(args.manifest, args.out)
        args.func = cmd_run
    try:
        return args.func(args)
    except (CliError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
