from typing import List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from geometry.se3 import Point3, Pose
from utils.config import Config

Vec3 = Tuple[float, float, float]


class QuaternionPose(BaseModel):
    quaternion: Tuple[float, float, float, float]
    translation: Vec3 = (0.0, 0.0, 0.0)


PoseField = Union[List[List[float]], QuaternionPose]


def pose_from_field(value: Optional[PoseField]) -> Pose:
    if value is None:
        return Pose.identity()
    if isinstance(value, QuaternionPose):
        return Pose.from_arrays(value.quaternion, value.translation)
    return Pose.from_matrix(value)


class BoxModel(BaseModel):
    min: Vec3
    max: Vec3


class StateMachineModel(BaseModel):
    states: List[str] = Field(min_length=1)
    initial: str
    transitions: List[Tuple[str, str, str]] = []


class PartModel(BaseModel):
    name: str
    pose: Optional[PoseField] = None
    keypoints: List[Vec3] = []
    extent: Vec3 = (0.0, 0.0, 0.0)


class ArticulationModel(BaseModel):
    part: str
    axis: Vec3
    depth: float = Field(gt=0)
    opening: float = Field(0.0, ge=0)
    open_fraction: float = Field(Config.DRAWER_OPEN_FRACTION, gt=0, le=1)
    action: str = "pull"
    close_action: str = "push"


class ObjectModel(BaseModel):
    id: str
    label: str = ""
    object_class: str = Field("object", alias="class")
    pose: PoseField
    extent: Vec3
    keypoints: List[Vec3] = []
    parts: List[PartModel] = []
    states: Optional[StateMachineModel] = None
    state: Optional[str] = None
    supports: List[str] = []
    articulation: Optional[ArticulationModel] = None
    container_floor: Optional[float] = None

    model_config = ConfigDict(populate_by_name=True)

    @model_validator(mode="after")
    def _check_extent(self):
        if any(e < 0 for e in self.extent):
            raise ValueError("extent half-sizes must be non-negative")
        return self


class SceneFileModel(BaseModel):
    schema_version: Literal[1] = Field(alias="schema")
    units: Literal["meters"] = "meters"
    workspace: BoxModel
    placement: Optional[BoxModel] = None
    ee_pose: Optional[PoseField] = None
    objects: List[ObjectModel]

    model_config = ConfigDict(populate_by_name=True)


def point(v: Vec3) -> Point3:
    return Point3(float(v[0]), float(v[1]), float(v[2]))
