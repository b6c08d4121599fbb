"""
Toolkit registry: loading, utility-based selection and latency history.
"""
from pathlib import Path
from typing import Iterable, List, Mapping, Optional, Union

from pydantic import ValidationError

from scene.scene_state import SceneObject
from toolkit.toolkit_models import Registry, RepKind, ToolSelection, ToolSpec, UtilityRow, satisfies
from utils.errors import ConfigError, ToolkitError, UnsatisfiableRequirementError
from utils.logger import get_logger
from utils.serialization import format_validation_error, read_json_file

logger = get_logger(__name__)

GRANULARITIES = ("coarse", "fine")


def registry_load(path: Union[str, Path]) -> Registry:
    raw = read_json_file(path)
    try:
        registry = Registry.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"{path}: invalid registry: {format_validation_error(e)}") from e
    logger.debug(f"Loaded registry {path} with {len(registry.tools)} tools, lambda={registry.lambda_}")
    return registry


def compatible_tools(reg: Registry, requirement: RepKind, granularity: str = "coarse") -> List[ToolSpec]:
    """Tools whose output satisfies ``requirement``; the fine path also needs region input."""
    if granularity not in GRANULARITIES:
        raise ToolkitError(f"unknown granularity '{granularity}'")
    tools = [t for t in reg.tools if satisfies(t.output_kind, requirement)]
    if granularity == "fine":
        tools = [t for t in tools if t.accepts_region]
    return tools


def crop_tool(reg: Registry) -> Optional[ToolSpec]:
    """Cheapest region-producing tool, used for the crop step of fine extraction."""
    regions = [t for t in reg.tools if t.output_kind == RepKind.REGION]
    if not regions:
        return None
    return min(regions, key=lambda t: (t.avg_time_s, t.name))


def utility_table(reg: Registry, tools: Iterable[ToolSpec], p_succ: Mapping[str, float]) -> List[UtilityRow]:
    """Rows sorted best first: utility desc, then avg_time_s asc, then name."""
    rows = []
    for t in tools:
        p = float(p_succ.get(t.name, 0.0))
        rows.append(UtilityRow(tool=t.name, p_succ=p, avg_time_s=t.avg_time_s, utility=p - reg.lambda_ * t.avg_time_s))
    rows.sort(key=lambda r: (-r.utility, r.avg_time_s, r.tool))
    return rows


def select_tool(
    reg: Registry,
    requirement: RepKind,
    obj: SceneObject,
    stage: int,
    p_succ: Mapping[str, float],
    granularity: str = "coarse",
) -> ToolSpec:
    """argmax over compatible tools of p_succ - lambda * avg_time_s."""
    return reg.tool(select_with_table(reg, requirement, obj, stage, p_succ, granularity).tool)


def select_with_table(
    reg: Registry,
    requirement: RepKind,
    obj: SceneObject,
    stage: int,
    p_succ: Mapping[str, float],
    granularity: str = "coarse",
) -> ToolSelection:
    requirement = RepKind(requirement)
    candidates = compatible_tools(reg, requirement, granularity)
    context = f"stage {stage}, object '{obj.id}', granularity {granularity}"
    crop = None
    if granularity == "fine":
        crop_spec = crop_tool(reg)
        if crop_spec is None:
            candidates = []
        else:
            crop = crop_spec.name
    if not candidates:
        raise UnsatisfiableRequirementError(requirement.value, reg.kinds, context)
    rows = utility_table(reg, candidates, p_succ)
    best = reg.tool(rows[0].tool)
    logger.debug(f"Stage {stage}: {obj.id} needs {requirement.value} -> {best.name} (u={rows[0].utility:.4f})")
    return ToolSelection(tool=best.name, output_kind=best.output_kind, crop_tool=crop, utilities=tuple(rows))


def update_history(reg: Registry, tool_name: str, elapsed_s: float) -> Registry:
    """Fold one invocation time into the tool's running mean."""
    if elapsed_s < 0:
        raise ToolkitError(f"elapsed time must be non-negative, got {elapsed_s}")
    spec = reg.tool(tool_name)
    if spec is None:
        raise ToolkitError(f"unknown tool '{tool_name}'")
    n = spec.invocations + 1
    avg = spec.avg_time_s + (elapsed_s - spec.avg_time_s) / n
    updated = spec.model_copy(update={"avg_time_s": avg, "invocations": n})
    return reg.model_copy(update={"tools": [updated if t.name == tool_name else t for t in reg.tools]})


def restrict_registry(reg: Registry, names: Iterable[str]) -> Registry:
    keep = set(names)
    missing = keep - set(reg.names)
    if missing:
        raise ConfigError(f"registry lacks tools required by the ablation: {', '.join(sorted(missing))}")
    return reg.model_copy(update={"tools": [t for t in reg.tools if t.name in keep]})


def derive_p_succ(reg: Registry, object_class: str, requirement: RepKind) -> dict:
    """Capability-derived success estimates for every tool in the registry."""
    return {t.name: t.capability(object_class, requirement) for t in reg.tools}
