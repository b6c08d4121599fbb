"""
Action-sequence generation across the stages of a grounded plan.
"""
from dataclasses import dataclass, field
from typing import List, Optional

from controllers.cog_models import StagePlan
from db.audit_log import AuditLog
from geometry.se3 import Trajectory
from planner.planner_models import SolverConfig, SolveStep, TrackConfig
from planner.stage_program import StageRunner, run_stage_program
from planner.tracking import Tracker, TrackingEvent
from scene.scene_state import OcclusionModel, SceneState
from toolkit.toolkit_models import CONVENTIONAL_KINDS, Registry, RepKind
from utils.errors import ExtractionFailure, PipelineError, PlanningError
from utils.logger import get_logger

logger = get_logger(__name__)


@dataclass
class ExecutionResult:
    trajectories: List[Trajectory]
    scene: SceneState
    events: List[TrackingEvent] = field(default_factory=list)
    re_extractions: int = 0
    failed_stage: Optional[int] = None
    error: Optional[PipelineError] = None

    @property
    def ok(self) -> bool:
        return self.error is None


def is_conventional(plan: StagePlan) -> bool:
    """True when every binding of the stage is a geometric kind the solver consumes directly."""
    kinds = [RepKind(b.requirement) for f in plan.functions for b in f.bindings.values()]
    kinds += [RepKind(b.requirement) for b in plan.program_bindings.values()]
    return all(k in CONVENTIONAL_KINDS for k in kinds)


def run_stage(plan: StagePlan, runner: StageRunner) -> Trajectory:
    if plan.diagnostics:
        raise ExtractionFailure(f"stage {plan.stage}: {plan.diagnostics[0]}")
    if plan.program is not None:
        return run_stage_program(plan.program, runner)
    if not is_conventional(plan):
        raise PlanningError(f"stage {plan.stage} binds state or topology representations but has no program")
    runner.solve(SolveStep("*", plan.gripper, plan.approach_height))
    return runner.concatenated()


def generate_action_sequence(
    plans: List[StagePlan],
    scene: SceneState,
    reg: Registry,
    solver: SolverConfig,
    track: TrackConfig,
    seed: int = 0,
    occlusion: Optional[OcclusionModel] = None,
    noise_scale: float = 1.0,
    capability_failures: bool = True,
    audit: Optional[AuditLog] = None,
) -> ExecutionResult:
    """
    Execute every stage in order, applying each trajectory to the scene
    before the next stage. The first failing stage aborts the rest; its
    error is returned on the result rather than raised.
    """
    result = ExecutionResult(trajectories=[], scene=scene)
    for plan in sorted(plans, key=lambda p: p.stage):
        tracker = Tracker(
            reg,
            plan.selections,
            track,
            plan.stage,
            seed=seed,
            occlusion=occlusion,
            noise_scale=noise_scale,
            capability_failures=capability_failures,
            audit=audit,
        )
        stage_solver = solver.model_copy(update={"seed": solver.seed + plan.stage})
        runner = StageRunner(plan.stage, plan.functions, plan.program_bindings, tracker, stage_solver, result.scene)
        try:
            tau = run_stage(plan, runner)
        except PipelineError as e:
            logger.error(f"Stage {plan.stage} failed ({e.module}): {e.message}")
            result.failed_stage = plan.stage
            result.error = e
            return result
        finally:
            result.scene = runner.scene
            result.events.extend(tracker.events)
            result.re_extractions += tracker.re_extractions
        result.trajectories.append(tau)
        logger.info(f"Stage {plan.stage} done at t={result.scene.clock:.2f} s, {len(tau.waypoints)} waypoints")
    return result
