"""
Planner configuration, solve problems and stage programs.
"""
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Literal, Optional, Set, Tuple, Union

from pydantic import BaseModel, Field, model_validator

from dsl.evaluator import ConstraintFn, EvalContext
from geometry.se3 import Box, GripperCommand, Pose
from utils.config import Config
from utils.errors import PlanningError


class SolverConfig(BaseModel):
    optimizer: Literal["gradient_descent", "coordinate_restart"] = "gradient_descent"
    max_iterations: int = Field(Config.SOLVER_MAX_ITERATIONS, ge=1)
    initial_step: float = Field(0.05, gt=0)
    step_growth: float = Field(2.0, ge=1)
    backtrack: float = Field(0.5, gt=0, lt=1)
    armijo: float = Field(1e-4, ge=0)
    min_step: float = Field(1e-10, gt=0)
    tolerance: float = Field(Config.SOLVER_TOLERANCE, ge=0)
    restarts: int = Field(Config.SOLVER_RESTARTS, ge=1)
    restart_radius: float = Field(0.15, ge=0)
    seed: int = 0
    waypoint_count: int = Field(Config.WAYPOINT_COUNT, ge=2)
    densify: int = Field(Config.DENSIFY_FACTOR, ge=1)
    smoothing_iterations: int = Field(10, ge=0)
    smoothing_weight: float = Field(1.0, ge=0)
    subgoal_weight: float = Field(1.0, ge=0)
    path_weight: float = Field(1.0, ge=0)
    collision_margin: float = Field(Config.COLLISION_MARGIN_M, ge=0)

    @property
    def stop_cost(self) -> float:
        """Cost at which descent stops early."""
        return self.tolerance * 1e-3


class TrackConfig(BaseModel):
    enabled: bool = True
    period_s: float = Field(Config.TRACK_PERIOD_S, gt=0)
    staleness_budget_s: float = Field(Config.TRACK_STALENESS_BUDGET_S, gt=0)
    per_stage: Dict[int, bool] = {}
    extraction_retries: int = Field(Config.EXTRACTION_RETRIES, ge=0)

    @model_validator(mode="after")
    def _budget_covers_period(self):
        if self.staleness_budget_s < self.period_s:
            raise ValueError("staleness_budget_s must be at least period_s")
        return self

    def enabled_for(self, stage: int) -> bool:
        return self.per_stage.get(stage, self.enabled)


@dataclass
class SolveProblem:
    stage: int
    subgoals: List[Tuple[ConstraintFn, EvalContext]]
    paths: List[Tuple[ConstraintFn, EvalContext]]
    start: Pose
    workspace: Box
    obstacles: List[Tuple[str, Box]] = field(default_factory=list)
    collision_margin: float = Config.COLLISION_MARGIN_M
    waypoint_count: int = Config.WAYPOINT_COUNT
    approach_height: float = 0.0
    gripper: GripperCommand = GripperCommand.HOLD
    label: str = ""

    def __post_init__(self):
        if self.waypoint_count < 2:
            raise PlanningError(f"stage {self.stage}: waypoint count must be >= 2, got {self.waypoint_count}")
        if self.workspace.volume <= 0:
            raise PlanningError(f"stage {self.stage}: workspace has no volume")


# ---------------------------------------------------------------------------
# Stage programs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SolveStep:
    group: str
    gripper: GripperCommand = GripperCommand.HOLD
    approach_height: float = 0.0


@dataclass(frozen=True)
class GripperStep:
    command: GripperCommand


@dataclass(frozen=True)
class QueryStateStep:
    """Branch on the current state of a state-machine binding; ``default`` None means no fallback."""

    binding: str
    branches: Dict[str, Tuple["Step", ...]]
    default: Optional[Tuple["Step", ...]] = None


@dataclass(frozen=True)
class ReorderStep:
    """Run ``body`` once per object of a topological order, top first; ``{item}`` names the object."""

    binding: str
    body: Tuple["Step", ...]


Step = Union[SolveStep, GripperStep, QueryStateStep, ReorderStep]


def _walk(steps: Iterable[Step]):
    for step in steps:
        yield step
        if isinstance(step, QueryStateStep):
            for body in step.branches.values():
                yield from _walk(body)
            if step.default:
                yield from _walk(step.default)
        elif isinstance(step, ReorderStep):
            yield from _walk(step.body)


@dataclass(frozen=True)
class StageProgram:
    """
    Fixed-structure program for one stage. Branches and loop bodies are
    nested, so control only moves forward and every program terminates.
    """

    steps: Tuple[Step, ...]

    def __post_init__(self):
        if not self.steps:
            raise PlanningError("a stage program needs at least one step")

    def walk(self) -> List[Step]:
        return list(_walk(self.steps))

    def check(self, groups: Set[str], bindings: Set[str], states: Optional[Dict[str, List[str]]] = None):
        """
        Static check: solve groups exist (``{item}`` templates must match a
        group prefix), queried bindings are declared and branch keys are
        states of the queried machine when ``states`` is given.
        """
        for step in self.walk():
            if isinstance(step, SolveStep):
                if "{item}" in step.group:
                    prefix = step.group.split("{item}")[0]
                    if not any(g.startswith(prefix) for g in groups):
                        raise PlanningError(f"solve step '{step.group}' matches no constraint group")
                elif step.group != "*" and step.group not in groups:
                    raise PlanningError(f"solve step references unknown group '{step.group}'")
            elif isinstance(step, (QueryStateStep, ReorderStep)):
                if step.binding not in bindings:
                    raise PlanningError(f"program step references undeclared binding '{step.binding}'")
                if isinstance(step, QueryStateStep) and states is not None and step.binding in states:
                    unknown = sorted(set(step.branches) - set(states[step.binding]))
                    if unknown:
                        raise PlanningError(f"branch on unknown state(s) {', '.join(unknown)} of '{step.binding}'")

    def to_dict(self) -> List[dict]:
        return [_step_dict(s) for s in self.steps]


def _step_dict(step: Step) -> dict:
    if isinstance(step, SolveStep):
        return {"op": "solve", "group": step.group, "gripper": step.gripper.value,
                "approach_height": step.approach_height}
    if isinstance(step, GripperStep):
        return {"op": "gripper", "command": step.command.value}
    if isinstance(step, QueryStateStep):
        return {
            "op": "query_state",
            "binding": step.binding,
            "branches": {k: [_step_dict(s) for s in v] for k, v in sorted(step.branches.items())},
            "default": None if step.default is None else [_step_dict(s) for s in step.default],
        }
    return {"op": "reorder_by", "binding": step.binding, "body": [_step_dict(s) for s in step.body]}


def substitute_item(step: Step, item: str) -> Step:
    if isinstance(step, SolveStep):
        return SolveStep(step.group.replace("{item}", item), step.gripper, step.approach_height)
    if isinstance(step, QueryStateStep):
        return QueryStateStep(
            step.binding,
            {k: tuple(substitute_item(s, item) for s in v) for k, v in step.branches.items()},
            None if step.default is None else tuple(substitute_item(s, item) for s in step.default),
        )
    if isinstance(step, ReorderStep):
        return ReorderStep(step.binding, tuple(substitute_item(s, item) for s in step.body))
    return step
