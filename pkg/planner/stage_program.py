"""
Stage execution: the solve/acquire/track/step cycle and the stage-program
interpreter built on it.
"""
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from dsl.evaluator import BindingSpec, ConstraintFn
from geometry.se3 import GripperCommand, Trajectory, Waypoint
from planner.planner_models import (
    GripperStep,
    QueryStateStep,
    ReorderStep,
    SolveProblem,
    SolverConfig,
    SolveStep,
    StageProgram,
    Step,
    substitute_item,
)
from planner.solver import solve_stage
from planner.tracking import Tracker
from scene.scene_sim import scene_step
from scene.scene_state import SceneState
from toolkit.toolkit_models import StateMachineRef, TopoOrderRep
from utils.config import Config
from utils.errors import PlanningError
from utils.logger import get_logger

logger = get_logger(__name__)


def scene_along(scene: SceneState, tau: Trajectory, t_start: float) -> Callable[[float], SceneState]:
    """Scene at time ``t`` while ``tau`` executes from ``t_start``, advanced by whole waypoints."""
    arrivals = []
    travelled = 0.0
    prev = scene.ee_pose.position
    for wp in tau.waypoints:
        travelled += float(np.linalg.norm(wp.pose.position - prev))
        prev = wp.pose.position
        arrivals.append(t_start + travelled / Config.NOMINAL_SPEED_MPS)
    cache: Dict[int, SceneState] = {0: scene}

    def at(t: float) -> SceneState:
        reached = sum(1 for a in arrivals if a <= t + 1e-9)
        if reached not in cache:
            prefix = Trajectory(tau.waypoints[:reached], tau.stage_index)
            cache[reached] = scene_step(scene, prefix)
        return cache[reached]

    return at


class StageRunner:
    """
    Executes steps of one stage against a live scene. Every step's
    trajectory is applied with scene_step before the next step runs.
    """

    def __init__(
        self,
        stage: int,
        functions: Sequence[ConstraintFn],
        query_bindings: Dict[str, BindingSpec],
        tracker: Tracker,
        solver: SolverConfig,
        scene: SceneState,
    ):
        self.stage = stage
        self.functions = list(functions)
        self.query_bindings = query_bindings
        self.tracker = tracker
        self.solver = solver
        self.scene = scene
        self.trajectories: List[Trajectory] = []

    def functions_in(self, group: str) -> List[ConstraintFn]:
        return [f for f in self.functions if group == "*" or f.group == group]

    def _apply(self, tau: Trajectory):
        self.scene = scene_step(self.scene, tau)
        self.trajectories.append(tau)

    def solve(self, step: SolveStep) -> Trajectory:
        fns = self.functions_in(step.group)
        if not fns:
            raise PlanningError(f"stage {self.stage}: no constraints in group '{step.group}'")
        bindings = {b.key: b for f in fns for b in f.bindings.values()}
        acquired = self.tracker.acquire(self.scene, bindings, label=f"{len(self.trajectories)}:{step.group}")
        self.scene = self.scene.advanced(acquired.clock - self.scene.clock)

        def pairs(kind: str):
            return [
                (f, self.tracker.context(f, self.scene.ee_pose))
                for f in fns if f.kind == kind
            ]

        targets = {b.object_id for b in bindings.values()}
        if self.scene.attached:
            targets.add(self.scene.attached)
        obstacles = [(o.id, o.box) for o in self.scene.objects if o.id not in targets]
        problem = SolveProblem(
            stage=self.stage,
            subgoals=pairs("subgoal"),
            paths=pairs("path"),
            start=self.scene.ee_pose,
            workspace=self.scene.workspace,
            obstacles=obstacles,
            collision_margin=self.solver.collision_margin,
            waypoint_count=self.solver.waypoint_count,
            approach_height=step.approach_height,
            gripper=step.gripper,
            label=step.group,
        )
        tau = solve_stage(problem, self.solver)
        duration = tau.path_length() / Config.NOMINAL_SPEED_MPS
        self.tracker.follow(scene_along(self.scene, tau, self.scene.clock), bindings, self.scene.clock, duration)
        self._apply(tau)
        return tau

    def gripper(self, command: GripperCommand) -> Trajectory:
        tau = Trajectory((Waypoint(self.scene.ee_pose, command),), self.stage)
        self._apply(tau)
        return tau

    def query(self, name: str):
        binding = self.query_bindings.get(name)
        if binding is None:
            raise PlanningError(f"stage {self.stage}: program queries undeclared binding '{name}'")
        acquired = self.tracker.acquire(self.scene, {binding.key: binding}, label=f"{len(self.trajectories)}:query:{name}")
        self.scene = self.scene.advanced(acquired.clock - self.scene.clock)
        return acquired.values[binding.key]

    def concatenated(self) -> Trajectory:
        """All step trajectories joined; a stage that moved nothing holds the current pose."""
        if not self.trajectories:
            return Trajectory((Waypoint(self.scene.ee_pose),), self.stage)
        return Trajectory(
            waypoints=tuple(w for t in self.trajectories for w in t.waypoints),
            stage_index=self.stage,
            converged=all(t.converged for t in self.trajectories),
            terminal_cost=self.trajectories[-1].terminal_cost,
            objective=sum(t.objective for t in self.trajectories),
            iteration_log=tuple(e for t in self.trajectories for e in t.iteration_log),
        )


def _run(steps: Sequence[Step], runner: StageRunner):
    for step in steps:
        if isinstance(step, SolveStep):
            runner.solve(step)
        elif isinstance(step, GripperStep):
            runner.gripper(step.command)
        elif isinstance(step, QueryStateStep):
            value = runner.query(step.binding)
            if not isinstance(value, StateMachineRef):
                raise PlanningError(f"query_state on '{step.binding}' returned a {value.kind.value}")
            branch: Optional[Sequence[Step]] = step.branches.get(value.state, step.default)
            if branch is None:
                raise PlanningError(f"stage {runner.stage}: no branch for state '{value.state}' of '{value.object_id}'")
            logger.info(f"Stage {runner.stage}: '{value.object_id}' is {value.state}, running {len(branch)} step(s)")
            _run(branch, runner)
        elif isinstance(step, ReorderStep):
            value = runner.query(step.binding)
            if not isinstance(value, TopoOrderRep):
                raise PlanningError(f"reorder_by on '{step.binding}' returned a {value.kind.value}")
            logger.info(f"Stage {runner.stage}: handling {', '.join(value.order)} in order")
            for item in value.order:
                _run([substitute_item(s, item) for s in step.body], runner)
        else:
            raise PlanningError(f"unknown program step {step!r}")


def run_stage_program(program: StageProgram, runner: StageRunner) -> Trajectory:
    """Interpret ``program`` in order and return the concatenated trajectory."""
    _run(program.steps, runner)
    return runner.concatenated()
