"""
Command-line interface.

Exit codes: 0 on success, 1 on configuration errors, 2 on anything else.
"""
import argparse
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from db.result_store import export_iteration_log, export_trajectories, load_report, save_report
from harness.benchmark import benchmark_load, run_ablation, run_benchmark, validate_inputs
from harness.harness_models import AblationMode, BenchmarkConfig, NOISE_PROFILES, TaskEntry, TrialConfig
from harness.report import render_ablation, render_table, report_bytes
from harness.trial import execute_trial, ground_trial
from utils.config import Config, load_yaml_overrides
from utils.errors import ConfigError
from utils.logger import get_logger
from utils.serialization import dumps, round_floats

logger = get_logger(__name__)

MODES = [m.value for m in AblationMode]


def _add_config_args(p: argparse.ArgumentParser):
    p.add_argument("--config", default=str(Config.BENCHMARK_FILE), help="benchmark YAML file")
    p.add_argument("--overrides", help="YAML file whose keys override the benchmark config")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--noise", choices=sorted(NOISE_PROFILES))
    p.add_argument("--seed", type=int, help="base seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="repgrounder", description="Representation grounding benchmark")
    sub = parser.add_subparsers(dest="command")

    run = sub.add_parser("run", help="run the benchmark suite")
    _add_config_args(run)
    run.add_argument("--trials", type=int)
    run.add_argument("--repeats", type=int)
    run.add_argument("--workers", type=int)
    run.add_argument("--out", help="directory for report.json and report.txt")
    run.add_argument("--json", action="store_true", help="print the JSON report instead of the table")
    run.add_argument("--no-progress", action="store_true")

    trial = sub.add_parser("trial", help="run one seeded trial verbosely")
    _add_config_args(trial)
    trial.add_argument("--task", required=True)
    trial.add_argument("--export", help="write the trajectory as JSON lines to this file")
    trial.add_argument("--audit", help="append the extraction records as JSON lines to this file")

    grd = sub.add_parser("ground", help="print the stage plans for one task")
    _add_config_args(grd)
    grd.add_argument("--task", required=True)

    val = sub.add_parser("validate", help="lint the scene, task and registry files")
    _add_config_args(val)

    rep = sub.add_parser("report", help="render a stored report")
    rep.add_argument("path", help="report.json or the directory holding it")

    abl = sub.add_parser("ablation", help="run every ablation mode on the suite")
    _add_config_args(abl)
    abl.add_argument("--trials", type=int)
    abl.add_argument("--repeats", type=int)
    abl.add_argument("--workers", type=int)
    abl.add_argument("--modes", nargs="+", choices=MODES)
    abl.add_argument("--no-progress", action="store_true")
    return parser


def _load_config(args) -> BenchmarkConfig:
    overrides: Dict[str, Any] = {}
    try:
        overrides.update(load_yaml_overrides(args.overrides))
    except (OSError, ValueError) as e:
        raise ConfigError(f"cannot read overrides: {e}") from e
    flags = {
        "mode": getattr(args, "mode", None),
        "noise": getattr(args, "noise", None),
        "base_seed": getattr(args, "seed", None),
        "trials": getattr(args, "trials", None),
        "repeats": getattr(args, "repeats", None),
        "workers": getattr(args, "workers", None),
    }
    overrides.update({k: v for k, v in flags.items() if v is not None})
    return benchmark_load(args.config, overrides)


def _task(cfg: BenchmarkConfig, name: str) -> TaskEntry:
    for t in cfg.tasks:
        if t.name == name:
            return t
    raise ConfigError(f"unknown task '{name}'; known: {', '.join(t.name for t in cfg.tasks)}")


def cmd_run(args) -> int:
    cfg = _load_config(args)
    report = run_benchmark(cfg, progress=not args.no_progress)
    if args.out:
        save_report(report, args.out)
    if args.json:
        sys.stdout.write(report_bytes(report).decode())
    else:
        print(render_table(report), end="")
    return 0


def cmd_trial(args) -> int:
    cfg = _load_config(args)
    outcome = execute_trial(TrialConfig.from_benchmark(cfg, _task(cfg, args.task), cfg.base_seed))
    print(dumps(round_floats(outcome.result.model_dump(mode="json")), indent=True).decode())
    for record in outcome.audit.records():
        status = "ok" if record.succeeded else record.failure_reason
        print(f"  stage {record.stage} {record.tool} -> {record.object_id}"
              f"{'/' + record.part if record.part else ''} [{status}] {record.elapsed_s:.2f}s")
    if args.export and outcome.execution is not None:
        count = export_trajectories(outcome.execution.trajectories, args.export)
        export_iteration_log(outcome.execution.trajectories, Path(args.export).with_suffix(".iterations.jsonl"))
        print(f"✅ Exported {count} waypoints to {args.export}")
    if args.audit:
        outcome.audit.write_jsonl(args.audit)
    return 0


def cmd_ground(args) -> int:
    cfg = _load_config(args)
    plans = ground_trial(TrialConfig.from_benchmark(cfg, _task(cfg, args.task), cfg.base_seed))
    print(dumps(round_floats([p.to_dict() for p in plans]), indent=True).decode())
    return 0


def cmd_validate(args) -> int:
    cfg = _load_config(args)
    for line in validate_inputs(cfg):
        print(f"✅ {line}")
    print(f"✅ registry {cfg.registry} ok")
    return 0


def cmd_report(args) -> int:
    print(render_table(load_report(args.path)), end="")
    return 0


def cmd_ablation(args) -> int:
    cfg = _load_config(args)
    modes = [AblationMode(m) for m in args.modes] if args.modes else None
    reports = run_ablation(cfg, modes, progress=not args.no_progress)
    print(render_ablation(reports), end="")
    return 0


COMMANDS = {
    "run": cmd_run,
    "trial": cmd_trial,
    "ground": cmd_ground,
    "validate": cmd_validate,
    "report": cmd_report,
    "ablation": cmd_ablation,
}


def cli(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return 2
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e.message}")
        print(f"❌ {e.message}", file=sys.stderr)
        return 1
    except Exception as e:
        logger.error(f"{args.command} failed: {e}", exc_info=True)
        print(f"❌ {e}", file=sys.stderr)
        return 2
