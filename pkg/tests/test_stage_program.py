from dataclasses import replace

import numpy as np
import pytest

from controllers.cog import ground
from controllers.oracle_backend import OracleBackend
from geometry.se3 import GripperCommand, Pose, Trajectory, Waypoint
from planner.action_generator import generate_action_sequence, is_conventional, run_stage
from planner.planner_models import (
    GripperStep,
    QueryStateStep,
    ReorderStep,
    SolverConfig,
    SolveStep,
    StageProgram,
    TrackConfig,
    substitute_item,
)
from planner.stage_program import StageRunner, run_stage_program, scene_along
from planner.tracking import Tracker
from scene.predicates import evaluate_success
from scene.scene_sim import observe
from scene.scene_state import OcclusionModel
from utils.errors import ExtractionFailure, PlanningError


@pytest.fixture
def plans_for(load_task, registry):
    def _plans(name, scene, mode="adaptive"):
        script = load_task(name)
        return ground(OracleBackend(script, registry), registry, script.instruction, observe(scene), mode=mode)
    return _plans


def _execute(plans, scene, registry):
    return generate_action_sequence(
        plans, scene, registry, SolverConfig(), TrackConfig(), seed=0, noise_scale=0.0, capability_failures=False
    )


class TestProgramModel:
    def test_empty_program(self):
        with pytest.raises(PlanningError):
            StageProgram(())

    def test_walk_visits_nested_steps(self):
        program = StageProgram((
            QueryStateStep("s", {"closed": (SolveStep("grasp"),)}, default=(GripperStep(GripperCommand.OPEN),)),
            ReorderStep("order", (SolveStep("grasp:{item}"),)),
        ))
        assert len(program.walk()) == 5

    def test_check_accepts_valid_program(self):
        program = StageProgram((
            QueryStateStep("s", {"closed": (SolveStep("grasp"),)}),
            ReorderStep("order", (SolveStep("grasp:{item}"),)),
        ))
        program.check({"grasp", "grasp:block_a"}, {"s", "order"}, {"s": ["closed", "open"]})

    @pytest.mark.parametrize("program, match", [
        (StageProgram((SolveStep("lift"),)), "unknown group"),
        (StageProgram((ReorderStep("order", (SolveStep("place:{item}"),)),)), "matches no constraint group"),
        (StageProgram((QueryStateStep("other", {"closed": ()}),)), "undeclared binding"),
        (StageProgram((QueryStateStep("s", {"ajar": ()}),)), "unknown state"),
    ])
    def test_check_rejects(self, program, match):
        with pytest.raises(PlanningError, match=match):
            program.check({"grasp", "grasp:block_a"}, {"s", "order"}, {"s": ["closed", "open"]})

    def test_substitute_item_reaches_branches(self):
        step = QueryStateStep("s", {"closed": (SolveStep("grasp:{item}"),)}, default=(SolveStep("place:{item}"),))
        out = substitute_item(step, "block_a")
        assert out.branches["closed"][0].group == "grasp:block_a"
        assert out.default[0].group == "place:block_a"

    def test_to_dict(self):
        program = StageProgram((GripperStep(GripperCommand.OPEN),))
        assert program.to_dict() == [{"op": "gripper", "command": "open"}]


class TestRunner:
    def test_gripper_only_program(self, registry, load_scene):
        scene = load_scene("pick_place")
        tracker = Tracker(registry, {}, TrackConfig(), stage=1)
        runner = StageRunner(1, [], {}, tracker, SolverConfig(), scene)
        tau = run_stage_program(StageProgram((GripperStep(GripperCommand.OPEN),)), runner)
        assert len(tau.waypoints) == 1
        assert tau.terminal.gripper == GripperCommand.OPEN
        assert tau.terminal.pose == scene.ee_pose

    def test_solve_step_with_empty_group(self, registry, load_scene):
        tracker = Tracker(registry, {}, TrackConfig(), stage=1)
        runner = StageRunner(1, [], {}, tracker, SolverConfig(), load_scene("pick_place"))
        with pytest.raises(PlanningError, match="no constraints in group"):
            runner.solve(SolveStep("grasp"))

    def test_scene_along_advances_by_reached_waypoints(self, load_scene):
        scene = load_scene("pick_place")
        start = scene.ee_pose.position
        grip = Pose.from_translation(0.1, 0.0, 0.025)
        tau = Trajectory((Waypoint(grip, GripperCommand.CLOSE), Waypoint(Pose.from_translation(0.1, 0.0, 0.2))), 1)
        arrive = float(np.linalg.norm(grip.position - start)) / 0.25
        at = scene_along(scene, tau, t_start=2.0)
        assert at(2.0 + arrive - 0.01) is scene
        assert at(2.0 + arrive).attached == "red_block"
        np.testing.assert_allclose(at(100.0).get("red_block").center, [0.1, 0.0, 0.2], atol=1e-9)

    def test_query_of_undeclared_binding(self, registry, load_scene):
        tracker = Tracker(registry, {}, TrackConfig(), stage=1)
        runner = StageRunner(1, [], {}, tracker, SolverConfig(), load_scene("drawer"))
        with pytest.raises(PlanningError, match="undeclared binding"):
            runner.query("drawer_state")


class TestDrawer:
    def test_closed_drawer_is_opened(self, plans_for, load_scene, load_task, registry):
        scene = load_scene("drawer")
        result = _execute(plans_for("drawer", scene), scene, registry)
        assert result.ok, result.error
        assert result.scene.get("cabinet").state == "open"
        script = load_task("drawer")
        assert evaluate_success(result.scene, script.success.predicate, script.success.args)

    def test_open_drawer_takes_default_branch(self, plans_for, load_scene, registry):
        scene = load_scene("drawer")
        scene = scene.with_object(replace(scene.get("cabinet"), state="open"))
        plans = plans_for("drawer", scene)
        result = _execute(plans[:1], scene, registry)
        assert result.ok
        tau = result.trajectories[0]
        assert len(tau.waypoints) == 1
        assert tau.terminal.pose == scene.ee_pose


class TestActionSequence:
    def test_pick_place_succeeds(self, plans_for, load_scene, load_task, registry):
        scene = load_scene("pick_place")
        result = _execute(plans_for("pick_place", scene), scene, registry)
        assert result.ok
        assert [t.stage_index for t in result.trajectories] == [1, 2]
        assert result.trajectories[0].terminal.gripper == GripperCommand.CLOSE
        assert result.re_extractions > 0
        script = load_task("pick_place")
        assert evaluate_success(result.scene, script.success.predicate, script.success.args)
        np.testing.assert_allclose(result.scene.get("red_block").center[:2], [-0.1, 0.0], atol=5e-3)

    def test_clock_covers_acquisition_and_motion(self, plans_for, load_scene, registry):
        scene = load_scene("pick_place")
        result = _execute(plans_for("pick_place", scene), scene, registry)
        motion = sum(t.path_length() for t in result.trajectories) / 0.25
        assert result.scene.clock > motion

    def test_stage_with_diagnostics_fails_extraction(self, plans_for, load_scene):
        plans = plans_for("plush_upright", load_scene("plush_upright"), mode="fixed_sp")
        with pytest.raises(ExtractionFailure, match="requires pose"):
            run_stage(plans[1], runner=None)

    def test_failure_is_returned_with_stage(self, plans_for, load_scene, registry):
        scene = load_scene("pick_place")
        plans = plans_for("pick_place", scene)
        result = generate_action_sequence(
            plans, scene, registry, SolverConfig(), TrackConfig(enabled=False, extraction_retries=0),
            occlusion=OcclusionModel(probability=1.0), noise_scale=0.0, capability_failures=False,
        )
        assert not result.ok
        assert result.failed_stage == 1
        assert isinstance(result.error, ExtractionFailure)
        assert result.trajectories == []

    def test_conventional_stages(self, plans_for, load_scene):
        assert all(is_conventional(p) for p in plans_for("pick_place", load_scene("pick_place")))
        assert not is_conventional(plans_for("drawer", load_scene("drawer"))[0])
