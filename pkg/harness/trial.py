"""
One randomized trial: randomize -> ground -> act -> check success.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

from controllers.cog import GroundingTrace, ground
from controllers.cog_models import StagePlan
from controllers.llm_calls import ChatCompletionClient, RemoteGroundingBackend
from controllers.oracle_backend import OracleBackend
from controllers.task_script import TaskScript, task_load
from db.audit_log import AuditLog
from harness.harness_models import ErrorCategory, TrialConfig, TrialResult
from planner.action_generator import ExecutionResult, generate_action_sequence
from scene.predicates import evaluate_success
from scene.scene_sim import observe, scene_load, scene_randomize
from scene.scene_state import OcclusionModel, SceneState
from toolkit.registry import registry_load
from toolkit.toolkit_models import Registry
from utils.errors import ConfigError, PipelineError, PlacementError
from utils.logger import get_logger
from utils.seeding import derive_seed

logger = get_logger(__name__)

# module tag of the first failing module -> reported category
MODULE_CATEGORIES = {
    "grounding": ErrorCategory.PLANNING,
    "toolkit": ErrorCategory.TOOLKIT_EXTRACTION,
    "tracking": ErrorCategory.REPRESENTATION_TRACKING,
    "planner": ErrorCategory.ACTION_GENERATION,
    "scene": ErrorCategory.ACTION_GENERATION,
    "geometry": ErrorCategory.ACTION_GENERATION,
}


def classify_failure(failure: Union[BaseException, str, None]) -> ErrorCategory:
    """Map a failure (exception or module tag) to its category; never raises."""
    if isinstance(failure, PlacementError):
        return ErrorCategory.OTHER
    module = failure if isinstance(failure, str) else getattr(failure, "module", None)
    return MODULE_CATEGORIES.get(module, ErrorCategory.OTHER)


@dataclass
class TrialOutcome:
    result: TrialResult
    plans: List[StagePlan] = field(default_factory=list)
    execution: Optional[ExecutionResult] = None
    audit: AuditLog = field(default_factory=AuditLog)


def grounding_backend(cfg: TrialConfig, script: TaskScript, reg: Registry):
    if cfg.backend == "remote":
        return RemoteGroundingBackend(ChatCompletionClient())
    return OracleBackend(script, reg, seed=cfg.seed, schema_error_prob=cfg.no_cog_schema_error_prob)


def _stage_logs(execution: ExecutionResult) -> List[dict]:
    return [
        {
            "stage": t.stage_index,
            "waypoints": len(t.waypoints),
            "converged": t.converged,
            "terminal_cost": t.terminal_cost,
            "objective": t.objective,
            "iterations": len(t.iteration_log),
        }
        for t in execution.trajectories
    ]


def load_trial_inputs(cfg: TrialConfig) -> Tuple[SceneState, TaskScript, Registry]:
    scene = scene_load(cfg.task.scene)
    script = task_load(cfg.task.script)
    reg = registry_load(cfg.registry)
    script.check_against(scene)
    return scene, script, reg


def ground_trial(cfg: TrialConfig) -> List[StagePlan]:
    """Randomize the scene for ``cfg.seed`` and ground it; grounding errors raise."""
    scene, script, reg = load_trial_inputs(cfg)
    scene = scene_randomize(scene, cfg.seed, full_rotation=cfg.full_rotation)
    return ground(
        grounding_backend(cfg, script, reg),
        reg,
        script.instruction,
        observe(scene, None, "ground"),
        mode=cfg.mode.selection,
        single_shot=cfg.mode.single_shot,
    )


def execute_trial(cfg: TrialConfig) -> TrialOutcome:
    """Run one trial and keep everything it produced. Only configuration errors raise."""
    scene, script, reg = load_trial_inputs(cfg)

    audit = AuditLog()
    trace = GroundingTrace()
    name = cfg.task.name
    logger.info(f"Trial {name} seed={cfg.seed} mode={cfg.mode.value}")

    def failed(error: PipelineError, stage: Optional[int] = None, execution: Optional[ExecutionResult] = None,
               plans: Optional[List[StagePlan]] = None) -> TrialOutcome:
        category = classify_failure(error)
        logger.warning(f"Trial {name} seed={cfg.seed} failed: {category.value} ({error.message})")
        result = TrialResult(
            task=name,
            seed=cfg.seed,
            success=False,
            sim_time_s=execution.scene.clock if execution else 0.0,
            extraction_time_s=audit.total_elapsed(),
            grounding_time_s=trace.elapsed_s,
            failure_category=category,
            failure_stage=stage,
            failure_message=error.message,
            re_extractions=execution.re_extractions if execution else 0,
            stages=_stage_logs(execution) if execution else [],
        )
        return TrialOutcome(result, plans or [], execution, audit)

    try:
        scene = scene_randomize(scene, cfg.seed, full_rotation=cfg.full_rotation)
    except PlacementError as e:
        return failed(e)

    occlusion = OcclusionModel(
        probability=cfg.noise.occlusion_probability,
        active_from_s=cfg.noise.occlusion_from_s,
        seed=derive_seed(cfg.seed, "occlusion"),
    )
    try:
        plans = ground(
            grounding_backend(cfg, script, reg),
            reg,
            script.instruction,
            observe(scene, None, "ground"),
            mode=cfg.mode.selection,
            single_shot=cfg.mode.single_shot,
            trace=trace,
        )
    except ConfigError:
        raise
    except PipelineError as e:
        return failed(e)

    execution = generate_action_sequence(
        plans,
        scene,
        reg,
        cfg.solver.model_copy(update={"seed": derive_seed(cfg.seed, "solver")}),
        cfg.track,
        seed=derive_seed(cfg.seed, "extract"),
        occlusion=occlusion,
        noise_scale=cfg.noise.noise_scale,
        capability_failures=cfg.noise.capability_failures,
        audit=audit,
    )
    if execution.error is not None:
        if isinstance(execution.error, ConfigError):
            raise execution.error
        return failed(execution.error, execution.failed_stage, execution, plans)

    success = evaluate_success(execution.scene, script.success.predicate, script.success.args)
    category = None if success else ErrorCategory.ACTION_GENERATION
    if not success:
        logger.warning(f"Trial {name} seed={cfg.seed}: actions finished but '{script.success.predicate}' is false")
    result = TrialResult(
        task=name,
        seed=cfg.seed,
        success=success,
        sim_time_s=execution.scene.clock,
        extraction_time_s=audit.total_elapsed(),
        grounding_time_s=trace.elapsed_s,
        failure_category=category,
        failure_message=None if success else f"success predicate '{script.success.predicate}' not satisfied",
        re_extractions=execution.re_extractions,
        stages=_stage_logs(execution),
    )
    return TrialOutcome(result, plans, execution, audit)


def run_trial(cfg: TrialConfig) -> TrialResult:
    return execute_trial(cfg).result
