"""
File storage for benchmark reports and trajectory exports.
"""
from pathlib import Path
from typing import Iterable, Union

from pydantic import ValidationError

from geometry.se3 import Trajectory
from harness.harness_models import BenchmarkReport
from harness.report import render_table, report_bytes
from utils.errors import ConfigError
from utils.logger import get_logger
from utils.serialization import dumps, format_validation_error, read_json_file, round_floats

logger = get_logger(__name__)

REPORT_JSON = "report.json"
REPORT_TEXT = "report.txt"


def save_report(report: BenchmarkReport, out_dir: Union[str, Path]) -> Path:
    """Write report.json and report.txt into ``out_dir``; returns the JSON path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / REPORT_JSON
    json_path.write_bytes(report_bytes(report))
    (out_dir / REPORT_TEXT).write_text(render_table(report), encoding="utf-8")
    logger.info(f"Saved report for {report.total.trials} trials to {out_dir}")
    return json_path


def load_report(path: Union[str, Path]) -> BenchmarkReport:
    path = Path(path)
    if path.is_dir():
        path = path / REPORT_JSON
    raw = read_json_file(path)
    try:
        return BenchmarkReport.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"{path}: invalid report: {format_validation_error(e)}") from e


def export_trajectories(trajectories: Iterable[Trajectory], path: Union[str, Path]) -> int:
    """One JSON line per waypoint: stage, index, 4x4 pose rows, gripper."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "wb") as f:
        for tau in trajectories:
            for i, wp in enumerate(tau.waypoints):
                line = {"stage": tau.stage_index, "index": i, "pose": wp.pose.as_rows(), "gripper": wp.gripper.value}
                f.write(dumps(round_floats(line, 9)) + b"\n")
                count += 1
    logger.info(f"Exported {count} waypoints to {path}")
    return count


def export_iteration_log(trajectories: Iterable[Trajectory], path: Union[str, Path]) -> int:
    """One JSON line per solver iteration: stage, restart, iteration, objective."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "wb") as f:
        for tau in trajectories:
            for restart, iteration, objective in tau.iteration_log:
                line = {"stage": tau.stage_index, "restart": restart, "iteration": iteration, "objective": objective}
                f.write(dumps(line) + b"\n")
                count += 1
    return count
