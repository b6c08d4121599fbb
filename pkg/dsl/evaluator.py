"""
Constraint functions and their evaluation against bound representations.

Runtime values: scalars are floats, vectors are (3,) arrays, rotations are
(4,) wxyz quaternions and poses are (quaternion, translation) tuples.
"""
import functools
import operator
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional

import numpy as np

from dsl.ast_nodes import Call, ConstraintExpr, Node, Number, String, Var, to_text
from dsl.parser import parse_constraint
from geometry.se3 import Pose, perturb_pose, quat_geodesic, quat_rotate
from toolkit.toolkit_models import (
    PointRep,
    PointSetRep,
    PoseRep,
    RegionRep,
    RepKind,
    RepresentationValue,
    VectorRep,
    satisfies,
    transform_rep,
)
from utils.config import Config
from utils.errors import DslBindingError, DslEvaluationError

CONSTRAINT_KINDS = ("subgoal", "path")
_AXES = {"x": np.array([1.0, 0.0, 0.0]), "y": np.array([0.0, 1.0, 0.0]), "z": np.array([0.0, 0.0, 1.0])}


@dataclass(frozen=True)
class BindingSpec:
    object_id: str
    part: Optional[str]
    requirement: RepKind
    granularity: str = "coarse"

    @property
    def key(self) -> str:
        target = f"{self.object_id}/{self.part}" if self.part else self.object_id
        return f"{target}:{RepKind(self.requirement).value}:{self.granularity}"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "object": self.object_id,
            "part": self.part,
            "requirement": RepKind(self.requirement).value,
            "granularity": self.granularity,
        }


@dataclass(frozen=True)
class ConstraintFn:
    name: str
    stage: int
    kind: str
    expr: ConstraintExpr
    bindings: Mapping[str, BindingSpec]
    source_text: str = ""
    group: str = ""

    def __post_init__(self):
        if self.kind not in CONSTRAINT_KINDS:
            raise DslBindingError(f"constraint '{self.name}': kind must be subgoal or path, got '{self.kind}'")
        missing = sorted(self.expr.rep_names - set(self.bindings))
        if missing:
            raise DslBindingError(f"constraint '{self.name}': no binding for {', '.join(missing)}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "stage": self.stage,
            "kind": self.kind,
            "group": self.group,
            "expr": to_text(self.expr.root),
            "bindings": {k: v.to_dict() for k, v in sorted(self.bindings.items())},
            "source_text": self.source_text,
        }


def make_constraint(
    name: str,
    stage: int,
    kind: str,
    text: str,
    bindings: Mapping[str, BindingSpec],
    source_text: str = "",
    group: str = "",
) -> ConstraintFn:
    expr = parse_constraint(text, declared_bindings=bindings.keys())
    return ConstraintFn(name, stage, kind, expr, dict(bindings), source_text, group)


@dataclass
class EvalContext:
    """
    Resolved representations for one constraint plus the candidate
    end-effector pose. Names listed in ``frames`` belong to a rigidly
    grasped object and are carried by the candidate pose; the frame is
    the end-effector pose at which the value was observed.
    """

    values: Mapping[str, RepresentationValue]
    ee_pose: Pose
    frames: Mapping[str, Pose] = field(default_factory=dict)
    _cache: Dict[str, RepresentationValue] = field(default_factory=dict, repr=False, compare=False)

    def with_ee(self, pose: Pose) -> "EvalContext":
        return EvalContext(self.values, pose, self.frames)

    def missing(self, names) -> List[str]:
        return sorted(n for n in names if n not in self.values)

    def resolve(self, name: str) -> RepresentationValue:
        if name in self._cache:
            return self._cache[name]
        if name not in self.values:
            raise DslEvaluationError(f"unresolved binding '{name}'")
        value = self.values[name]
        ref = self.frames.get(name)
        if ref is not None:
            value = transform_rep(value, self.ee_pose.compose(ref.inverse()))
        self._cache[name] = value
        return value


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def _kind(x) -> str:
    kind = getattr(x, "kind", None)
    return kind.value if kind is not None else type(x).__name__


def _point_of(rep) -> np.ndarray:
    if isinstance(rep, PointRep):
        return rep.point.as_array()
    if isinstance(rep, PointSetRep):
        return rep.centroid()
    if isinstance(rep, VectorRep):
        return rep.origin.as_array()
    if isinstance(rep, PoseRep):
        return rep.pose.position
    if isinstance(rep, RegionRep):
        return rep.center
    raise DslEvaluationError(f"point_of: a {_kind(rep)} representation has no position")


def _rotation(x, fname: str) -> np.ndarray:
    if isinstance(x, np.ndarray) and x.shape == (4,):
        return x
    if isinstance(x, tuple):
        return x[0]
    if isinstance(x, PoseRep):
        return x.pose.rotation.q
    raise DslEvaluationError(f"{fname}: a {_kind(x)} representation has no orientation")


def _translation_of(x) -> np.ndarray:
    if isinstance(x, tuple):
        return x[1]
    if isinstance(x, PoseRep):
        return x.pose.position
    return _point_of(x)


def _axis_of(x, axis: str) -> np.ndarray:
    return quat_rotate(_rotation(x, "axis_of"), _AXES[axis])


def _direction_of(rep) -> np.ndarray:
    if isinstance(rep, VectorRep):
        return rep.direction.as_array()
    raise DslEvaluationError(f"direction_of: a {_kind(rep)} representation has no direction")


def _norm(v) -> float:
    return float(np.linalg.norm(v))


def _angle_between(u, v) -> float:
    return float(np.arctan2(np.linalg.norm(np.cross(u, v)), np.dot(u, v)))


IMPLEMENTATIONS: Dict[str, Callable[..., Any]] = {
    "add": lambda *a: functools.reduce(operator.add, a),
    "sub": operator.sub,
    "mul": operator.mul,
    "max": lambda *a: float(max(a)),
    "min": lambda *a: float(min(a)),
    "abs": lambda a: float(abs(a)),
    "norm": _norm,
    "dot": lambda u, v: float(np.dot(u, v)),
    "cross": lambda u, v: np.cross(u, v),
    "angle_between": _angle_between,
    "geodesic": lambda a, b: quat_geodesic(a, b),
    "point_of": _point_of,
    "axis_of": _axis_of,
    "translation_of": _translation_of,
    "rotation_of": lambda x: _rotation(x, "rotation_of"),
    "direction_of": _direction_of,
    "vec": lambda a, b, c: np.array([a, b, c], dtype=float),
}


def _evaluate(node: Node, ctx: EvalContext):
    if isinstance(node, Number):
        return float(node.value)
    if isinstance(node, String):
        return node.value
    if isinstance(node, Var):
        if node.name == "ee_pos":
            return ctx.ee_pose.position
        if node.name == "ee_rot":
            return ctx.ee_pose.rotation.q
        if node.name == "ee_pose":
            return ctx.ee_pose.rotation.q, ctx.ee_pose.position
        return node.name
    if isinstance(node, Call):
        if node.name == "rep":
            return ctx.resolve(node.args[0].value)
        args = [_evaluate(a, ctx) for a in node.args]
        return IMPLEMENTATIONS[node.name](*args)
    raise DslEvaluationError(f"cannot evaluate node {node!r}")


def eval_constraint(f: ConstraintFn, ctx: EvalContext) -> float:
    """Scalar cost of ``f``; zero when the constraint is met."""
    missing = ctx.missing(f.expr.rep_names)
    if missing:
        raise DslEvaluationError(f"constraint '{f.name}': unresolved binding(s) {', '.join(missing)}")
    value = float(_evaluate(f.expr.root, ctx))
    if not np.isfinite(value):
        raise DslEvaluationError(f"constraint '{f.name}' evaluated to {value}")
    return value


def fd_gradient(cost: Callable[[Pose], float], pose: Pose, h: float = Config.FD_STEP) -> np.ndarray:
    """Central differences over (translation, world rotation vector)."""
    g = np.zeros(6)
    for i in range(6):
        d = np.zeros(6)
        d[i] = h
        g[i] = (cost(perturb_pose(pose, d)) - cost(perturb_pose(pose, -d))) / (2.0 * h)
    return g


def grad_fd(f: ConstraintFn, ctx: EvalContext, h: float = Config.FD_STEP) -> np.ndarray:
    return fd_gradient(lambda p: eval_constraint(f, ctx.with_ee(p)), ctx.ee_pose, h)


def validate_bindings(f: ConstraintFn, plan) -> List[str]:
    """
    Diagnostics for bindings the plan cannot serve. ``plan`` needs a
    ``selections`` mapping from binding key to ToolSelection.
    """
    diagnostics = []
    for name, b in sorted(f.bindings.items()):
        selection = plan.selections.get(b.key)
        if selection is None:
            diagnostics.append(f"{f.name}: binding '{name}' ({b.key}) has no selected tool")
        elif not satisfies(selection.output_kind, b.requirement):
            diagnostics.append(
                f"{f.name}: binding '{name}' requires {RepKind(b.requirement).value} "
                f"but {selection.tool} outputs {RepKind(selection.output_kind).value}"
            )
    return diagnostics


def context_for(
    f: ConstraintFn,
    values_by_key: Mapping[str, RepresentationValue],
    ee_pose: Pose,
    frames_by_key: Optional[Mapping[str, Pose]] = None,
) -> EvalContext:
    """Build the name-keyed context of ``f`` from values keyed by binding key."""
    frames_by_key = frames_by_key or {}
    values, frames = {}, {}
    for name, b in f.bindings.items():
        if b.key in values_by_key:
            values[name] = values_by_key[b.key]
        if b.key in frames_by_key:
            frames[name] = frames_by_key[b.key]
    return EvalContext(values, ee_pose, frames)
