"""
Grounding phase schemas and plan types.

Backends return plain dicts; each phase validates them against one of the
response models below. Every response field is required, so a payload with
a missing field is always rejected.
"""
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Optional, Protocol

from pydantic import BaseModel, Field, model_validator

from dsl.evaluator import BindingSpec, ConstraintFn
from geometry.se3 import GripperCommand
from planner.planner_models import GripperStep, QueryStateStep, ReorderStep, SolveStep, StageProgram, Step
from scene.scene_state import Observation
from toolkit.toolkit_models import RepKind, ToolSelection


# ---------------------------------------------------------------------------
# Stage program steps (shared by task scripts and emit responses)
# ---------------------------------------------------------------------------

class StepModel(BaseModel):
    op: Literal["solve", "gripper", "query_state", "reorder_by"]
    group: Optional[str] = None
    gripper: GripperCommand = GripperCommand.HOLD
    approach_height: float = Field(0.0, ge=0)
    command: Optional[GripperCommand] = None
    binding: Optional[str] = None
    branches: Dict[str, List["StepModel"]] = {}
    default: Optional[List["StepModel"]] = None
    body: List["StepModel"] = []

    @model_validator(mode="after")
    def _check_op_fields(self):
        needed = {"solve": "group", "gripper": "command", "query_state": "binding", "reorder_by": "binding"}[self.op]
        if getattr(self, needed) is None:
            raise ValueError(f"{self.op} step needs '{needed}'")
        if self.op == "reorder_by" and not self.body:
            raise ValueError("reorder_by step needs a non-empty body")
        return self

    def to_step(self) -> Step:
        if self.op == "solve":
            return SolveStep(self.group, self.gripper, self.approach_height)
        if self.op == "gripper":
            return GripperStep(self.command)
        if self.op == "query_state":
            return QueryStateStep(
                self.binding,
                {k: tuple(s.to_step() for s in v) for k, v in self.branches.items()},
                None if self.default is None else tuple(s.to_step() for s in self.default),
            )
        return ReorderStep(self.binding, tuple(s.to_step() for s in self.body))


StepModel.model_rebuild()


def program_from_models(steps: List[StepModel]) -> StageProgram:
    return StageProgram(tuple(s.to_step() for s in steps))


# ---------------------------------------------------------------------------
# Phase responses
# ---------------------------------------------------------------------------

class StageHints(BaseModel):
    stage: int = Field(ge=1)
    hints: List[str] = Field(min_length=1)
    gripper: GripperCommand
    approach_height: float = Field(ge=0)


class DecomposeResponse(BaseModel):
    stages: List[StageHints] = Field(min_length=1)


class ObjectRequirement(BaseModel):
    name: str
    object: str
    part: Optional[str]
    requirement: RepKind
    granularity: Literal["coarse", "fine"]

    def binding(self) -> BindingSpec:
        return BindingSpec(self.object, self.part, self.requirement, self.granularity)


class NlConstraintModel(BaseModel):
    stage: int = Field(ge=1)
    hint: int = Field(ge=0)
    index: int = Field(ge=0)
    text: str
    kind: Literal["subgoal", "path", "query"]
    group: str
    objects: List[ObjectRequirement] = Field(min_length=1)


class ConstraintResponse(BaseModel):
    constraints: List[NlConstraintModel]


class SuccessEstimate(BaseModel):
    key: str
    p_succ: Dict[str, float]

    @model_validator(mode="after")
    def _probabilities(self):
        for tool, p in self.p_succ.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"p_succ for {tool} must lie in [0, 1], got {p}")
        return self


class SuccessEstimateResponse(BaseModel):
    estimates: List[SuccessEstimate]


class EmittedFunction(BaseModel):
    stage: int = Field(ge=1)
    hint: int = Field(ge=0)
    index: int = Field(ge=0)
    name: str
    expr: str


class EmittedProgram(BaseModel):
    stage: int = Field(ge=1)
    steps: List[StepModel] = Field(min_length=1)


class EmitResponse(BaseModel):
    functions: List[EmittedFunction]
    programs: List[EmittedProgram]


class SingleShotResponse(BaseModel):
    stages: List[StageHints] = Field(min_length=1)
    constraints: List[NlConstraintModel]
    estimates: List[SuccessEstimate]
    functions: List[EmittedFunction]
    programs: List[EmittedProgram]


PHASE_MODELS = {
    "decompose": DecomposeResponse,
    "constraints": ConstraintResponse,
    "estimate": SuccessEstimateResponse,
    "emit": EmitResponse,
    "single_shot": SingleShotResponse,
}


# ---------------------------------------------------------------------------
# Plan types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Hint:
    stage: int
    index: int
    text: str


@dataclass(frozen=True)
class NlConstraint:
    stage: int
    hint: int
    index: int
    text: str
    kind: str
    group: str
    objects: tuple

    @property
    def cid(self) -> str:
        return f"{self.stage}.{self.hint}.{self.index}"

    @property
    def bindings(self) -> Dict[str, BindingSpec]:
        return {o.name: o.binding() for o in self.objects}

    @classmethod
    def from_model(cls, m: NlConstraintModel) -> "NlConstraint":
        return cls(m.stage, m.hint, m.index, m.text, m.kind, m.group, tuple(m.objects))


@dataclass
class StagePlan:
    stage: int
    hints: List[Hint]
    constraints: List[NlConstraint]
    selections: Dict[str, ToolSelection] = field(default_factory=dict)
    bindings: Dict[str, BindingSpec] = field(default_factory=dict)
    functions: List[ConstraintFn] = field(default_factory=list)
    p_succ: Dict[str, Dict[str, float]] = field(default_factory=dict)
    gripper: GripperCommand = GripperCommand.HOLD
    approach_height: float = 0.0
    program: Optional[StageProgram] = None
    diagnostics: List[str] = field(default_factory=list)

    @property
    def objects(self) -> List[str]:
        """O_s: every object referenced by a constraint of the stage."""
        return sorted({o.object for c in self.constraints for o in c.objects})

    @property
    def program_bindings(self) -> Dict[str, BindingSpec]:
        """Bindings of query constraints, addressable by program steps."""
        out: Dict[str, BindingSpec] = {}
        for c in self.constraints:
            if c.kind == "query":
                out.update(c.bindings)
        return out

    @property
    def groups(self) -> List[str]:
        return sorted({f.group for f in self.functions})

    def functions_in(self, group: str) -> List[ConstraintFn]:
        return [f for f in self.functions if group == "*" or f.group == group]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "stage": self.stage,
            "hints": [h.text for h in self.hints],
            "constraints": [
                {"id": c.cid, "text": c.text, "kind": c.kind, "group": c.group,
                 "objects": [o.model_dump(mode="json") for o in c.objects]}
                for c in self.constraints
            ],
            "selections": {k: v.to_dict() for k, v in sorted(self.selections.items())},
            "functions": [f.to_dict() for f in self.functions],
            "gripper": self.gripper.value,
            "approach_height": self.approach_height,
            "program": self.program.to_dict() if self.program else None,
            "diagnostics": list(self.diagnostics),
        }


class GroundingBackend(Protocol):
    """One method per grounding phase; each returns the raw phase payload."""

    def decompose(self, instruction: str, obs: Observation) -> Dict[str, Any]:
        ...

    def infer_constraints(self, instruction: str, obs: Observation, hints: List[Hint]) -> Dict[str, Any]:
        ...

    def estimate_success(
        self, instruction: str, obs: Observation, stage: int, requirements: List[ObjectRequirement]
    ) -> Dict[str, Any]:
        ...

    def emit(
        self, instruction: str, obs: Observation, constraints: List[NlConstraint], selections: Dict[str, ToolSelection]
    ) -> Dict[str, Any]:
        ...

    def single_shot(self, instruction: str, obs: Observation) -> Dict[str, Any]:
        ...

    def latency(self, phase: str) -> float:
        ...
