"""
Task scripts: the deterministic program behind the oracle grounding backend.
"""
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from controllers.cog_models import StepModel
from geometry.se3 import GripperCommand
from scene.predicates import PREDICATES
from scene.scene_state import SceneState
from toolkit.toolkit_models import RepKind
from utils.errors import ConfigError, SceneError
from utils.logger import get_logger
from utils.serialization import format_validation_error

logger = get_logger(__name__)


class BindingTemplate(BaseModel):
    name: str
    object: str
    part: Optional[str] = None
    requirement: RepKind
    granularity: Literal["coarse", "fine"] = "coarse"


class ConstraintTemplate(BaseModel):
    text: str
    kind: Literal["subgoal", "path", "query"] = "subgoal"
    group: str = "main"
    objects: List[BindingTemplate] = Field(min_length=1)
    expr: Optional[str] = None
    foreach: Optional[List[str]] = None

    @model_validator(mode="after")
    def _expr_unless_query(self):
        if self.kind != "query" and not self.expr:
            raise ValueError(f"{self.kind} constraint '{self.text}' needs an expr")
        return self

    def expand(self) -> List["ConstraintTemplate"]:
        """One template per ``foreach`` item with ``{item}`` substituted."""
        if not self.foreach:
            return [self]
        out = []
        for item in self.foreach:
            data = self.model_dump()
            data["foreach"] = None
            data["text"] = self.text.replace("{item}", item)
            data["group"] = self.group.replace("{item}", item)
            data["expr"] = self.expr.replace("{item}", item) if self.expr else None
            for o in data["objects"]:
                o["object"] = o["object"].replace("{item}", item)
            out.append(ConstraintTemplate.model_validate(data))
        return out


class HintTemplate(BaseModel):
    text: str
    constraints: List[ConstraintTemplate] = Field(min_length=1)


class StageTemplate(BaseModel):
    stage: int = Field(ge=1)
    gripper: GripperCommand = GripperCommand.HOLD
    approach_height: float = Field(0.0, ge=0)
    hints: List[HintTemplate] = Field(min_length=1)
    program: Optional[List[StepModel]] = None


class SuccessSpec(BaseModel):
    predicate: str
    args: Dict[str, Any] = {}


class TaskScript(BaseModel):
    schema_version: Literal[1] = Field(alias="schema")
    name: str
    instruction: str = Field(min_length=1)
    success: SuccessSpec
    p_succ: Union[Literal["derive"], Dict[str, float]] = "derive"
    stages: List[StageTemplate] = Field(min_length=1)

    model_config = ConfigDict(populate_by_name=True)

    @model_validator(mode="after")
    def _contiguous_stages(self):
        numbers = [s.stage for s in self.stages]
        if numbers != list(range(1, len(numbers) + 1)):
            raise ValueError(f"stages must be numbered 1..{len(numbers)} in order, got {numbers}")
        return self

    def objects(self) -> List[tuple]:
        """(object, part) pairs referenced anywhere in the script."""
        refs = []
        for stage in self.stages:
            for hint in stage.hints:
                for template in hint.constraints:
                    for c in template.expand():
                        refs.extend((o.object, o.part) for o in c.objects)
        return refs

    def check_against(self, scene: SceneState):
        """Raise ConfigError when the script references what the scene lacks."""
        for object_id, part in self.objects():
            if not scene.has(object_id):
                raise ConfigError(f"task '{self.name}' references unknown object '{object_id}'")
            if part is not None:
                try:
                    scene.get(object_id).part(part)
                except SceneError as e:
                    raise ConfigError(f"task '{self.name}': {e.message}") from e
        if self.success.predicate not in PREDICATES:
            raise ConfigError(f"task '{self.name}' uses unknown success predicate '{self.success.predicate}'")


def task_load(path: Union[str, Path]) -> TaskScript:
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"{path}: cannot read task script ({e.strerror or e})") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from e
    try:
        script = TaskScript.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"{path}: invalid task script: {format_validation_error(e)}") from e
    logger.debug(f"Loaded task script '{script.name}' with {len(script.stages)} stages")
    return script
