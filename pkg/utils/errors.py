"""
Exception hierarchy shared by every pipeline module.

Each class carries a ``module`` tag; the harness maps the tag of the first
failing module to an error category.
"""
from typing import List, Optional


class PipelineError(Exception):
    """Base class for all pipeline errors."""

    module = "other"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class ConfigError(PipelineError):
    """A scene, registry, task or config file is missing or malformed."""

    module = "config"


class GeometryError(PipelineError, ValueError):
    module = "geometry"


class SceneError(PipelineError):
    """Scene invariant violation or rejected scene operation."""

    module = "scene"

    def __init__(self, message: str, object_id: Optional[str] = None, waypoint_index: Optional[int] = None):
        super().__init__(message)
        self.object_id = object_id
        self.waypoint_index = waypoint_index


class PlacementError(SceneError):
    """Randomization could not place objects without interpenetration."""


class ToolkitError(PipelineError):
    """Hard extraction error (unknown target, missing state machine, unknown tool)."""

    module = "toolkit"


class UnsatisfiableRequirementError(ToolkitError):
    def __init__(self, requirement: str, registry_kinds: List[str], context: str = ""):
        kinds = ", ".join(sorted(set(registry_kinds))) or "<empty registry>"
        where = f" ({context})" if context else ""
        super().__init__(f"unsatisfiable requirement '{requirement}'{where}; registry provides: {kinds}")
        self.requirement = requirement
        self.registry_kinds = list(registry_kinds)


class ExtractionFailure(ToolkitError):
    """Soft extraction failures exhausted their retries."""

    def __init__(self, message: str, binding_key: Optional[str] = None):
        super().__init__(message)
        self.binding_key = binding_key


class DslError(PipelineError):
    module = "grounding"

    def __init__(self, message: str, position: Optional[int] = None):
        where = f" at position {position}" if position is not None else ""
        super().__init__(f"{message}{where}")
        self.position = position


class DslSyntaxError(DslError):
    pass


class DslTypeError(DslError):
    pass


class DslBindingError(DslError):
    pass


class DslEvaluationError(DslError):
    module = "planner"


class GroundingError(PipelineError):
    """A grounding phase failed; ``phase`` names it."""

    module = "grounding"

    def __init__(self, message: str, phase: str = "ground"):
        super().__init__(f"[{phase}] {message}")
        self.phase = phase


class SchemaValidationError(GroundingError):
    pass


class BackendTransportError(GroundingError):
    pass


class PlanningError(PipelineError):
    """Action-sequence generation failed."""

    module = "planner"


class StaleRepresentationError(PipelineError):
    """A tracked representation exceeded its staleness budget."""

    module = "tracking"

    def __init__(self, message: str, binding_key: Optional[str] = None, at_time: Optional[float] = None):
        super().__init__(message)
        self.binding_key = binding_key
        self.at_time = at_time
