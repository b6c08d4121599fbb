"""
Representation values, tool specifications and extraction records.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from geometry.se3 import Box, Point3, Pose, Rotation, UnitVector3, quat_from_rotvec, quat_mul
from utils.config import Config


class RepKind(str, Enum):
    POINT = "point"
    POINT_SET = "point_set"
    VECTOR = "vector"
    POSE = "pose"
    REGION = "region"
    STATE_MACHINE = "state_machine"
    TOPO_ORDER = "topo_order"


CONVENTIONAL_KINDS = frozenset({RepKind.POINT, RepKind.POINT_SET, RepKind.VECTOR, RepKind.POSE})

# requirement -> output kinds able to satisfy it
KIND_COMPATIBILITY: Dict[RepKind, frozenset] = {
    RepKind.POINT: frozenset({RepKind.POINT, RepKind.POINT_SET, RepKind.POSE}),
    RepKind.POINT_SET: frozenset({RepKind.POINT_SET}),
    RepKind.VECTOR: frozenset({RepKind.VECTOR}),
    RepKind.POSE: frozenset({RepKind.POSE}),
    RepKind.REGION: frozenset({RepKind.REGION}),
    RepKind.STATE_MACHINE: frozenset({RepKind.STATE_MACHINE}),
    RepKind.TOPO_ORDER: frozenset({RepKind.TOPO_ORDER}),
}


def satisfies(output_kind: RepKind, requirement: RepKind) -> bool:
    return RepKind(output_kind) in KIND_COMPATIBILITY[RepKind(requirement)]


# ---------------------------------------------------------------------------
# Representation values
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PointRep:
    point: Point3
    kind = RepKind.POINT

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "point": [self.point.x, self.point.y, self.point.z]}


@dataclass(frozen=True)
class PointSetRep:
    points: Tuple[Tuple[str, Point3], ...]
    kind = RepKind.POINT_SET

    def centroid(self) -> np.ndarray:
        return np.mean([p.as_array() for _, p in self.points], axis=0)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "points": {label: [p.x, p.y, p.z] for label, p in self.points}}


@dataclass(frozen=True)
class VectorRep:
    origin: Point3
    direction: UnitVector3
    kind = RepKind.VECTOR

    def to_dict(self) -> Dict[str, Any]:
        o, d = self.origin, self.direction
        return {"kind": self.kind.value, "origin": [o.x, o.y, o.z], "direction": [d.x, d.y, d.z]}


@dataclass(frozen=True)
class PoseRep:
    pose: Pose
    kind = RepKind.POSE

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "pose": self.pose.as_rows()}


@dataclass(frozen=True)
class RegionRep:
    object_id: str
    part: Optional[str]
    box: Box
    kind = RepKind.REGION

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.box.lo) + np.asarray(self.box.hi))

    @property
    def size(self) -> np.ndarray:
        return np.asarray(self.box.hi) - np.asarray(self.box.lo)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "object": self.object_id,
            "part": self.part,
            "box": {"min": list(self.box.lo), "max": list(self.box.hi)},
        }


@dataclass(frozen=True)
class StateMachineRef:
    object_id: str
    state: str
    kind = RepKind.STATE_MACHINE

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "object": self.object_id, "state": self.state}


@dataclass(frozen=True)
class TopoOrderRep:
    order: Tuple[str, ...]
    kind = RepKind.TOPO_ORDER

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "order": list(self.order)}


RepresentationValue = Union[PointRep, PointSetRep, VectorRep, PoseRep, RegionRep, StateMachineRef, TopoOrderRep]


def transform_rep(value: RepresentationValue, t: Pose) -> RepresentationValue:
    """Move a geometric representation rigidly by ``t``; discrete values pass through."""
    if isinstance(value, PointRep):
        return PointRep(t.transform(value.point))
    if isinstance(value, PointSetRep):
        return PointSetRep(tuple((label, t.transform(p)) for label, p in value.points))
    if isinstance(value, VectorRep):
        d = t.rotation.rotate(value.direction.as_array())
        return VectorRep(t.transform(value.origin), UnitVector3.from_array(d))
    if isinstance(value, PoseRep):
        return PoseRep(t.compose(value.pose))
    return value


def perturb_rotation(r: Rotation, rotvec: np.ndarray) -> Rotation:
    return Rotation.from_array(quat_mul(quat_from_rotvec(rotvec), r.q))


# ---------------------------------------------------------------------------
# Registry file models
# ---------------------------------------------------------------------------

class NoiseComponent(BaseModel):
    kind: Literal["gaussian_point", "gaussian_angle", "dropout", "none"]
    sigma: float = Field(0.0, ge=0)
    p: float = Field(0.0, ge=0, le=1)


class LatencyModel(BaseModel):
    mean_s: float = Field(ge=0)
    jitter_s: float = Field(0.0, ge=0)


InputKind = Literal["observation", "object_list", "region"]


class ToolSpec(BaseModel):
    """One registry entry. Unknown keys are kept for forward compatibility."""

    model_config = ConfigDict(extra="allow", populate_by_name=True, frozen=True)

    name: str
    inputs: List[InputKind] = ["observation"]
    output_kind: RepKind = Field(alias="output")
    output_format: str = Field("", alias="format")
    summary: str = ""
    avg_time_s: float = Field(ge=0)
    invocations: int = Field(0, ge=0)
    capabilities: Dict[str, Dict[RepKind, float]] = {}
    noise: List[NoiseComponent] = []
    latency: Optional[LatencyModel] = None
    fine_scale: float = Field(Config.FINE_SCALE_DEFAULT, gt=0, le=1)
    occlusion_tolerant: bool = False

    @field_validator("capabilities")
    @classmethod
    def _check_capabilities(cls, value):
        for object_class, table in value.items():
            for requirement, p in table.items():
                if not (0.0 <= p <= 1.0):
                    raise ValueError(
                        f"malformed capability entry ({object_class}, {requirement.value}): probability {p} not in [0, 1]"
                    )
        return value

    @property
    def latency_model(self) -> LatencyModel:
        return self.latency or LatencyModel(mean_s=self.avg_time_s)

    @property
    def accepts_region(self) -> bool:
        return "region" in self.inputs

    def capability(self, object_class: str, requirement: RepKind) -> float:
        """Base success probability; a class entry wins over the '*' wildcard, missing means 0."""
        requirement = RepKind(requirement)
        for key in (object_class, "*"):
            table = self.capabilities.get(key)
            if table is not None and requirement in table:
                return float(table[requirement])
        return 0.0

    def sigma(self, kind: str) -> float:
        return float(sum(c.sigma for c in self.noise if c.kind == kind))

    def dropout(self) -> float:
        keep = 1.0
        for c in self.noise:
            if c.kind == "dropout":
                keep *= 1.0 - c.p
        return 1.0 - keep


class Registry(BaseModel):
    model_config = ConfigDict(populate_by_name=True, frozen=True)

    schema_version: int = Field(1, alias="schema")
    lambda_: float = Field(Config.DEFAULT_LAMBDA, alias="lambda", ge=0)
    tools: List[ToolSpec] = []

    @model_validator(mode="after")
    def _unique_names(self):
        seen = set()
        for t in self.tools:
            if t.name in seen:
                raise ValueError(f"duplicate tool name '{t.name}'")
            seen.add(t.name)
        return self

    def tool(self, name: str) -> Optional[ToolSpec]:
        for t in self.tools:
            if t.name == name:
                return t
        return None

    @property
    def names(self) -> List[str]:
        return [t.name for t in self.tools]

    @property
    def kinds(self) -> List[str]:
        return [t.output_kind.value for t in self.tools]


# ---------------------------------------------------------------------------
# Selection and extraction results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UtilityRow:
    tool: str
    p_succ: float
    avg_time_s: float
    utility: float


@dataclass(frozen=True)
class ToolSelection:
    """Selected extractor for one binding, plus the crop tool on the fine path."""

    tool: str
    output_kind: RepKind
    crop_tool: Optional[str] = None
    utilities: Tuple[UtilityRow, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tool": self.tool,
            "output_kind": self.output_kind.value,
            "crop_tool": self.crop_tool,
            "utilities": [
                {"tool": r.tool, "p_succ": r.p_succ, "avg_time_s": r.avg_time_s, "utility": r.utility}
                for r in self.utilities
            ],
        }


@dataclass(frozen=True)
class ExtractionRecord:
    tool: str
    stage: int
    object_id: str
    value: Optional[RepresentationValue]
    elapsed_s: float
    succeeded: bool
    timestamp: float
    part: Optional[str] = None
    failure_reason: Optional[str] = None
    wall_s: float = 0.0
    requirement: Optional[RepKind] = None
    granularity: str = "coarse"
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self, include_wall: bool = False) -> Dict[str, Any]:
        out = {
            "tool": self.tool,
            "stage": self.stage,
            "object": self.object_id,
            "part": self.part,
            "requirement": self.requirement.value if self.requirement else None,
            "granularity": self.granularity,
            "succeeded": self.succeeded,
            "failure_reason": self.failure_reason,
            "elapsed_s": self.elapsed_s,
            "timestamp": self.timestamp,
            "value": self.value.to_dict() if self.value is not None else None,
        }
        if include_wall:
            out["wall_s"] = self.wall_s
        return out
