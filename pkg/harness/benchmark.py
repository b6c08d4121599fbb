"""
Benchmark runner: fan trials out over a thread pool and aggregate them.
"""
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import yaml
from pydantic import ValidationError
from tqdm import tqdm

from controllers.task_script import task_load
from harness.harness_models import (
    AblationMode,
    BenchmarkConfig,
    BenchmarkReport,
    ErrorCategory,
    TaskEntry,
    TaskSummary,
    TrialConfig,
    TrialResult,
)
from harness.trial import run_trial
from scene.scene_sim import scene_load
from toolkit.registry import registry_load
from utils.errors import ConfigError
from utils.logger import get_logger
from utils.serialization import format_validation_error

logger = get_logger(__name__)


def _resolve(base: Path, p: Union[str, Path]) -> Path:
    p = Path(p)
    return p if p.is_absolute() else (base / p)


def benchmark_load(path: Union[str, Path], overrides: Optional[Dict[str, Any]] = None) -> BenchmarkConfig:
    """
    Read a benchmark YAML file. Relative paths resolve against the file's
    directory; ``overrides`` (already parsed) win over file values.
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
    except OSError as e:
        raise ConfigError(f"{path}: cannot read benchmark config ({e.strerror or e})") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: benchmark config must be a mapping")
    raw.update(overrides or {})
    base = path.resolve().parent
    for task in raw.get("tasks", []) or []:
        if isinstance(task, dict):
            for key in ("scene", "script"):
                if key in task:
                    task[key] = str(_resolve(base, task[key]))
    if "registry" in raw:
        raw["registry"] = str(_resolve(base, raw["registry"]))
    try:
        return BenchmarkConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"{path}: invalid benchmark config: {format_validation_error(e)}") from e


def validate_inputs(cfg: BenchmarkConfig) -> List[str]:
    """Load every file the benchmark needs; returns one line per checked task."""
    registry_load(cfg.registry)
    lines = []
    for task in cfg.tasks:
        scene = scene_load(task.scene)
        script = task_load(task.script)
        script.check_against(scene)
        lines.append(f"{task.name}: {len(scene.objects)} objects, {len(script.stages)} stage(s)")
    return lines


def _summary(name: str, results: List[TrialResult], repeats: int) -> TaskSummary:
    n = len(results)
    successes = sum(1 for r in results if r.success)
    per_repeat_rate = []
    per_repeat_time = []
    for rep in range(repeats):
        chunk = [r for r in results if r.repeat == rep]
        if chunk:
            per_repeat_rate.append(sum(r.success for r in chunk) / len(chunk))
            per_repeat_time.append(float(np.mean([r.sim_time_s for r in chunk])))
    return TaskSummary(
        task=name,
        trials=n,
        successes=successes,
        success_rate=successes / n if n else 0.0,
        success_std=float(np.std(per_repeat_rate)) if per_repeat_rate else 0.0,
        mean_time_s=float(np.mean([r.sim_time_s for r in results])) if n else 0.0,
        time_std=float(np.std(per_repeat_time)) if per_repeat_time else 0.0,
        mean_extraction_time_s=float(np.mean([r.extraction_time_s for r in results])) if n else 0.0,
        mean_grounding_time_s=float(np.mean([r.grounding_time_s for r in results])) if n else 0.0,
    )


def aggregate(cfg: BenchmarkConfig, results: List[TrialResult]) -> BenchmarkReport:
    tasks = [_summary(t.name, [r for r in results if r.task == t.name], cfg.repeats) for t in cfg.tasks]
    histogram = {c: 0 for c in ErrorCategory}
    for r in results:
        if not r.success:
            histogram[r.failure_category] += 1
    seeds = sorted({s for rep in range(cfg.repeats) for s in cfg.seeds(rep)})
    return BenchmarkReport(
        mode=cfg.mode,
        noise=cfg.noise_profile.name,
        trials_per_task=cfg.trials,
        repeats=cfg.repeats,
        seeds=seeds,
        tasks=tasks,
        total=_summary("Total", results, cfg.repeats),
        failures=sum(1 for r in results if not r.success),
        error_histogram=histogram,
        results=results,
        config=cfg.model_dump(mode="json", by_alias=True, exclude={"workers"}),
    )


def run_benchmark(cfg: BenchmarkConfig, progress: bool = True) -> BenchmarkReport:
    """
    Run ``trials`` seeded trials per task and repeat. Results are stored by
    job index, so the report does not depend on the worker count.
    """
    jobs = [
        (rep, task, seed)
        for rep in range(cfg.repeats)
        for task in cfg.tasks
        for seed in cfg.seeds(rep)
    ]
    results: List[Optional[TrialResult]] = [None] * len(jobs)
    start_time = time.time()
    logger.info(f"Running {len(jobs)} trials in mode {cfg.mode.value} with {cfg.workers} worker(s)")

    def run_single(index: int, rep: int, task: TaskEntry, seed: int):
        result = run_trial(TrialConfig.from_benchmark(cfg, task, seed))
        return index, result.model_copy(update={"repeat": rep})

    with ThreadPoolExecutor(max_workers=cfg.workers) as executor:
        future_to_index = {
            executor.submit(run_single, i, rep, task, seed): i
            for i, (rep, task, seed) in enumerate(jobs)
        }
        bar = tqdm(total=len(jobs), desc=f"{cfg.mode.value}", disable=not progress, leave=False)
        for future in as_completed(future_to_index):
            try:
                index, result = future.result()
                results[index] = result
            except ConfigError:
                raise
            except Exception as e:
                index = future_to_index[future]
                rep, task, seed = jobs[index]
                logger.error(f"Error running trial {task.name} seed={seed}: {e}")
                results[index] = TrialResult(
                    task=task.name,
                    seed=seed,
                    success=False,
                    sim_time_s=0.0,
                    failure_category=ErrorCategory.OTHER,
                    failure_message=str(e),
                    repeat=rep,
                )
            bar.update(1)
        bar.close()

    report = aggregate(cfg, results)
    logger.info(
        f"Benchmark completed in {time.time() - start_time:.2f}s: "
        f"{report.total.successes}/{report.total.trials} succeeded"
    )
    return report


def run_ablation(cfg: BenchmarkConfig, modes: Optional[List[AblationMode]] = None, progress: bool = True) -> Dict[AblationMode, BenchmarkReport]:
    """Run the same suite under every ablation mode."""
    reports = {}
    for mode in modes or list(AblationMode):
        reports[mode] = run_benchmark(cfg.model_copy(update={"mode": mode}), progress=progress)
    return reports
