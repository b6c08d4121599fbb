import math
from types import SimpleNamespace

import numpy as np
import pytest

from dsl.ast_nodes import DslType, to_text
from dsl.evaluator import (
    BindingSpec,
    EvalContext,
    context_for,
    eval_constraint,
    fd_gradient,
    grad_fd,
    make_constraint,
    validate_bindings,
)
from dsl.parser import parse_constraint, parse_expression
from geometry.se3 import Point3, Pose, Rotation, UnitVector3
from toolkit.toolkit_models import PointRep, PoseRep, RepKind, StateMachineRef, ToolSelection, VectorRep
from utils.errors import DslBindingError, DslEvaluationError, DslSyntaxError, DslTypeError

POINT_A = BindingSpec("red_block", None, RepKind.POINT)


def _point(x, y, z):
    return PointRep(Point3(x, y, z))


class TestParse:
    def test_scalar_expression(self):
        expr = parse_constraint("norm(sub(ee_pos, vec(0, 0, 0.1)))")
        assert expr.result_type == DslType.SCALAR
        assert expr.rep_names == frozenset()

    def test_collects_rep_names(self):
        expr = parse_constraint('angle_between(direction_of(rep("pen")), axis_of(ee_rot, z))')
        assert expr.rep_names == {"pen"}

    def test_whitespace_and_scientific_numbers(self):
        expr = parse_constraint("  add( 1e-3 , -2.5 , .5 ) ")
        assert expr.result_type == DslType.SCALAR

    @pytest.mark.parametrize("text", ["", "   ", "norm(ee_pos", "norm(ee_pos))", "1 + 2", 'rep("a)'])
    def test_syntax_errors(self, text):
        with pytest.raises(DslSyntaxError):
            parse_constraint(text)

    def test_type_error_reports_argument_position(self):
        with pytest.raises(DslTypeError, match="at position 5") as exc:
            parse_constraint("norm(1)")
        assert exc.value.position == 5
        assert "must be vec" in exc.value.message

    def test_arity_errors(self):
        with pytest.raises(DslTypeError, match="does not take 1 argument"):
            parse_constraint("add(1)")
        with pytest.raises(DslTypeError):
            parse_constraint("vec(1, 2)")

    def test_unknown_names(self):
        with pytest.raises(DslTypeError, match="unknown function"):
            parse_constraint("teleport(ee_pos)")
        with pytest.raises(DslTypeError, match="unknown name"):
            parse_constraint("norm(gripper_pos)")

    def test_constraint_must_be_scalar(self):
        with pytest.raises(DslTypeError, match="scalar"):
            parse_constraint("sub(ee_pos, vec(0, 0, 0))")

    def test_unbound_rep(self):
        with pytest.raises(DslBindingError, match="'b'"):
            parse_constraint('norm(sub(point_of(rep("a")), point_of(rep("b"))))', declared_bindings=["a"])

    def test_rep_needs_literal(self):
        with pytest.raises(DslTypeError):
            parse_constraint("norm(point_of(rep(x)))")

    def test_pretty_printed_text_reparses_equal(self):
        text = 'max(geodesic(ee_rot, rotation_of(rep("cup"))), mul(0.5, norm(cross(axis_of(ee_pose, x), vec(0, 0, 1)))))'
        root = parse_expression(text)
        assert parse_expression(to_text(root)) == root


class TestEvaluate:
    def test_binding_key(self):
        assert POINT_A.key == "red_block:point:coarse"
        assert BindingSpec("pen", "body", RepKind.VECTOR, "fine").key == "pen/body:vector:fine"

    def test_distance_to_point(self):
        f = make_constraint("reach", 1, "subgoal", 'norm(sub(ee_pos, point_of(rep("a"))))', {"a": POINT_A})
        ctx = EvalContext({"a": _point(0.1, 0.0, 0.0)}, Pose.identity())
        assert eval_constraint(f, ctx) == pytest.approx(0.1)
        assert eval_constraint(f, ctx.with_ee(Pose.from_translation(0.1, 0.0, 0.0))) == pytest.approx(0.0)

    def test_grasped_binding_moves_with_candidate(self):
        f = make_constraint("carry", 1, "subgoal", 'norm(sub(point_of(rep("a")), vec(0.3, 0, 0)))', {"a": POINT_A})
        grasped_at = Pose.from_translation(0.1, 0.0, 0.2)
        ctx = EvalContext({"a": _point(0.1, 0.0, 0.1)}, grasped_at, frames={"a": grasped_at})
        assert eval_constraint(f, ctx) == pytest.approx(math.hypot(0.2, 0.1))
        assert eval_constraint(f, ctx.with_ee(Pose.from_translation(0.3, 0.0, 0.1))) == pytest.approx(0.0, abs=1e-12)

    def test_orientation_and_direction(self):
        f = make_constraint(
            "align",
            2,
            "subgoal",
            'add(geodesic(ee_rot, rotation_of(rep("p"))), angle_between(direction_of(rep("v")), axis_of(ee_rot, z)))',
            {"p": BindingSpec("cat", None, RepKind.POSE), "v": BindingSpec("pen", "body", RepKind.VECTOR, "fine")},
        )
        values = {
            "p": PoseRep(Pose(Rotation.about_z(0.3), Point3(0, 0, 0))),
            "v": VectorRep(Point3(0, 0, 0), UnitVector3(0.0, 0.0, 1.0)),
        }
        assert eval_constraint(f, EvalContext(values, Pose.identity())) == pytest.approx(0.3)

    def test_runtime_kind_mismatch(self):
        f = make_constraint("bad", 1, "subgoal", 'norm(point_of(rep("s")))', {"s": BindingSpec("cabinet", None, RepKind.STATE_MACHINE)})
        with pytest.raises(DslEvaluationError, match="no position"):
            eval_constraint(f, EvalContext({"s": StateMachineRef("cabinet", "closed")}, Pose.identity()))

    def test_unresolved_binding(self):
        f = make_constraint("reach", 1, "subgoal", 'norm(point_of(rep("a")))', {"a": POINT_A})
        with pytest.raises(DslEvaluationError, match="unresolved"):
            eval_constraint(f, EvalContext({}, Pose.identity()))

    def test_kind_and_bindings_checked(self):
        with pytest.raises(DslBindingError):
            make_constraint("q", 1, "query", "abs(1)", {})
        with pytest.raises(DslBindingError):
            make_constraint("r", 1, "subgoal", 'norm(point_of(rep("a")))', {})

    def test_finite_difference_gradient(self):
        f = make_constraint("reach", 1, "subgoal", 'norm(sub(ee_pos, point_of(rep("a"))))', {"a": POINT_A})
        ctx = EvalContext({"a": _point(0.0, 0.0, 0.0)}, Pose.from_translation(0.3, 0.0, 0.0))
        np.testing.assert_allclose(grad_fd(f, ctx), [1.0, 0.0, 0.0, 0.0, 0.0, 0.0], atol=1e-6)

    def test_rotation_gradient_is_world_frame(self):
        def cost(p):
            return float(p.rotation.as_rotvec()[2])
        np.testing.assert_allclose(fd_gradient(cost, Pose(Rotation.about_z(0.2), Point3(0, 0, 0))),
                                   [0, 0, 0, 0, 0, 1.0], atol=1e-6)


class TestBindings:
    def test_missing_and_mismatched_selections(self):
        f = make_constraint(
            "f",
            1,
            "subgoal",
            'angle_between(direction_of(rep("v")), vec(0, 0, 1))',
            {"v": BindingSpec("pen", "body", RepKind.VECTOR, "fine")},
        )
        assert "no selected tool" in validate_bindings(f, SimpleNamespace(selections={}))[0]
        wrong = SimpleNamespace(selections={"pen/body:vector:fine": ToolSelection("CenterPointExtractor", RepKind.POINT)})
        assert "requires vector" in validate_bindings(f, wrong)[0]
        right = SimpleNamespace(selections={"pen/body:vector:fine": ToolSelection("VLMTaskVectorExtractor", RepKind.VECTOR)})
        assert validate_bindings(f, right) == []

    def test_context_for_maps_keys_to_names(self):
        f = make_constraint("reach", 1, "subgoal", 'norm(sub(ee_pos, point_of(rep("a"))))', {"a": POINT_A})
        frame = Pose.from_translation(0, 0, 0.1)
        ctx = context_for(f, {POINT_A.key: _point(0, 0, 0), "other:point:coarse": _point(1, 1, 1)}, Pose.identity(), {POINT_A.key: frame})
        assert set(ctx.values) == {"a"}
        assert ctx.frames == {"a": frame}
