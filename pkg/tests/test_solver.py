import numpy as np
import pytest

from dsl.evaluator import BindingSpec, EvalContext, eval_constraint, make_constraint
from geometry.se3 import Box, GripperCommand, Point3, Pose, Rotation, rotation_geodesic
from planner.planner_models import SolveProblem, SolverConfig
from planner.solver import densify, solve_stage
from toolkit.toolkit_models import PointRep, PoseRep, RepKind
from utils.errors import PlanningError, StaleRepresentationError

WORKSPACE = Box((-0.6, -0.6, 0.0), (0.6, 0.6, 0.6))
TARGET = BindingSpec("target", None, RepKind.POINT)


def _reach(goal, start=(0.0, 0.0, 0.4), **kwargs):
    f = make_constraint("reach", 1, "subgoal", 'norm(sub(ee_pos, point_of(rep("t"))))', {"t": TARGET})
    start_pose = Pose.from_translation(*start)
    ctx = EvalContext({"t": PointRep(Point3(*goal))}, start_pose)
    return SolveProblem(stage=1, subgoals=[(f, ctx)], paths=[], start=start_pose, workspace=WORKSPACE, **kwargs)


def test_reaches_point_goal():
    tau = solve_stage(_reach((0.2, 0.1, 0.3)), SolverConfig())
    assert tau.converged
    assert np.linalg.norm(tau.terminal.pose.position - [0.2, 0.1, 0.3]) < 1e-3
    assert tau.waypoints[0].pose == Pose.from_translation(0.0, 0.0, 0.4)
    assert len(tau.waypoints) == SolverConfig().waypoint_count


def test_pattern_search_optimizer_also_converges():
    tau = solve_stage(_reach((0.2, 0.1, 0.3)), SolverConfig(optimizer="coordinate_restart"))
    assert np.linalg.norm(tau.terminal.pose.position - [0.2, 0.1, 0.3]) < 5e-3


def test_reaches_orientation_goal():
    f = make_constraint("turn", 1, "subgoal", 'geodesic(ee_rot, rotation_of(rep("p")))',
                        {"p": BindingSpec("cup", None, RepKind.POSE)})
    goal = Rotation.from_axis_angle([0.0, 1.0, 1.0], 0.8)
    start = Pose.from_translation(0.0, 0.0, 0.3)
    ctx = EvalContext({"p": PoseRep(Pose(goal, Point3(0.1, 0.0, 0.0)))}, start)
    tau = solve_stage(SolveProblem(1, [(f, ctx)], [], start, WORKSPACE), SolverConfig())
    assert rotation_geodesic(tau.terminal.pose.rotation, goal) < 1e-2
    np.testing.assert_allclose(tau.terminal.pose.position, [0.0, 0.0, 0.3], atol=1e-9)


def test_already_satisfied_start_stays_put():
    tau = solve_stage(_reach((0.0, 0.0, 0.4)), SolverConfig())
    assert tau.terminal.pose.isclose(Pose.from_translation(0.0, 0.0, 0.4))
    assert tau.terminal_cost == pytest.approx(0.0, abs=1e-12)


def test_terminal_cost_matches_re_evaluation():
    p = _reach((0.25, -0.15, 0.2))
    tau = solve_stage(p, SolverConfig())
    fn, ctx = p.subgoals[0]
    assert tau.terminal_cost == pytest.approx(eval_constraint(fn, ctx.with_ee(tau.terminal.pose)), abs=1e-12)
    assert tau.objective == pytest.approx(tau.terminal_cost, abs=1e-12)


def test_unreachable_goal_is_clamped_and_unconverged():
    tau = solve_stage(_reach((0.0, 0.0, 1.0)), SolverConfig(max_iterations=60))
    assert not tau.converged
    assert tau.terminal.pose.position[2] <= 0.6 + 1e-12
    assert tau.terminal_cost == pytest.approx(0.4, abs=1e-3)


def test_goal_inside_obstacle_fails():
    p = _reach((0.2, 0.0, 0.05), obstacles=[("crate", Box.from_center((0.2, 0.0, 0.05), (0.05, 0.05, 0.05)))])
    with pytest.raises(PlanningError, match="clear of obstacles"):
        solve_stage(p, SolverConfig(max_iterations=40))


def test_interior_waypoints_lift_over_obstacles():
    wall = Box.from_center((0.0, 0.0, 0.05), (0.05, 0.3, 0.05))
    p = _reach((0.3, 0.0, 0.05), start=(-0.3, 0.0, 0.05), obstacles=[("wall", wall)])
    tau = solve_stage(p, SolverConfig())
    interior = [w.pose.position for w in tau.waypoints[1:-1]]
    assert max(q[2] for q in interior) >= 0.11 - 1e-9
    assert all(wall.distance(q) >= 0.01 - 1e-9 for q in interior)


def test_approach_waypoint_sits_above_terminal():
    tau = solve_stage(_reach((0.2, 0.0, 0.1), approach_height=0.1, gripper=GripperCommand.CLOSE), SolverConfig())
    terminal = tau.terminal.pose.position
    np.testing.assert_allclose(tau.waypoints[-2].pose.position, terminal + [0.0, 0.0, 0.1], atol=1e-12)
    assert tau.terminal.gripper == GripperCommand.CLOSE
    assert all(w.gripper == GripperCommand.HOLD for w in tau.waypoints[:-1])


def test_path_constraint_holds_along_the_trajectory():
    f_goal = make_constraint("reach", 1, "subgoal", 'norm(sub(ee_pos, point_of(rep("t"))))', {"t": TARGET})
    f_path = make_constraint("stay_high", 1, "path", "abs(sub(dot(ee_pos, vec(0, 0, 1)), 0.4))", {})
    start = Pose.from_translation(-0.3, 0.0, 0.4)
    values = {"t": PointRep(Point3(0.3, 0.0, 0.4))}
    p = SolveProblem(1, [(f_goal, EvalContext(values, start))], [(f_path, EvalContext({}, start))], start, WORKSPACE)
    tau = solve_stage(p, SolverConfig())
    assert all(abs(w.pose.position[2] - 0.4) < 1e-3 for w in tau.waypoints)


def test_unresolved_binding_is_stale():
    p = _reach((0.2, 0.0, 0.2))
    fn, ctx = p.subgoals[0]
    p.subgoals = [(fn, EvalContext({}, ctx.ee_pose))]
    with pytest.raises(StaleRepresentationError) as exc:
        solve_stage(p, SolverConfig())
    assert exc.value.binding_key == "target:point:coarse"


def test_seeded_restarts_are_deterministic():
    p = _reach((0.3, 0.2, 1.0))
    a = solve_stage(p, SolverConfig(seed=3, max_iterations=30))
    b = solve_stage(p, SolverConfig(seed=3, max_iterations=30))
    assert a == b
    assert {entry[0] for entry in a.iteration_log} == {0, 1, 2, 3}


def test_problem_validation():
    with pytest.raises(PlanningError):
        _reach((0.1, 0.0, 0.1), waypoint_count=1)


def test_densify_keeps_endpoints():
    poses = [Pose.from_translation(0, 0, 0), Pose.from_translation(1, 0, 0)]
    dense = densify(poses, 4)
    assert len(dense) == 5
    np.testing.assert_allclose(dense[2].position, [0.5, 0.0, 0.0])
    assert dense[-1] == poses[-1]


def test_densify_slerps_rotation_evenly():
    a = Pose(Rotation.identity(), Point3(0.0, 0.0, 0.2))
    b = Pose(Rotation.about_z(1.2), Point3(0.2, 0.0, 0.2))
    dense = densify([a, b], 4)
    steps = [rotation_geodesic(p.rotation, q.rotation) for p, q in zip(dense, dense[1:])]
    np.testing.assert_allclose(steps, [0.3] * 4, atol=1e-9)
