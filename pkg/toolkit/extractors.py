"""
Simulated extractors.

Every extractor reads ground truth from the observation snapshot and
corrupts it with the tool's noise model. Draws come from generators keyed
by (seed, purpose, tool, object, part) so results do not depend on call order:
the success draw first, then noise, then latency.
"""
import time
from dataclasses import replace
from typing import Iterable, List, Mapping, Optional, Union

import networkx as nx
import numpy as np

from geometry.se3 import Box, Point3, Pose, Rotation, UnitVector3
from scene.scene_state import Observation, SceneObject
from toolkit.registry import crop_tool, select_with_table
from toolkit.toolkit_models import (
    ExtractionRecord,
    PointRep,
    PointSetRep,
    PoseRep,
    RegionRep,
    Registry,
    RepKind,
    RepresentationValue,
    StateMachineRef,
    ToolSpec,
    TopoOrderRep,
    VectorRep,
    perturb_rotation,
)
from utils.config import Config
from utils.errors import SceneError, ToolkitError
from utils.logger import get_logger
from utils.seeding import rng_for

logger = get_logger(__name__)

Padding = Union[float, str]


def _object(obs: Observation, object_id: str) -> SceneObject:
    if not obs.snapshot.has(object_id):
        raise ToolkitError(f"target '{object_id}' is not in the scene")
    return obs.snapshot.get(object_id)


def _check_part(obj: SceneObject, part: Optional[str]):
    if part is not None:
        try:
            obj.part(part)
        except SceneError as e:
            raise ToolkitError(e.message) from e


# ---------------------------------------------------------------------------
# Ground truth
# ---------------------------------------------------------------------------

def _keypoints(obj: SceneObject, part: Optional[str]) -> List[np.ndarray]:
    return obj.world_keypoints(part)


def ground_truth(obs: Observation, kind: RepKind, object_id: str, part: Optional[str] = None) -> RepresentationValue:
    """Exact representation of an object or one of its parts."""
    obj = _object(obs, object_id)
    _check_part(obj, part)
    kind = RepKind(kind)
    if kind == RepKind.POINT:
        if part is None:
            return PointRep(Point3.from_array(obj.center))
        kps = _keypoints(obj, part)
        p = kps[0] if kps else obj.part_pose(part).position
        return PointRep(Point3.from_array(p))
    if kind == RepKind.POINT_SET:
        kps = _keypoints(obj, part) or [obj.center if part is None else obj.part_pose(part).position]
        return PointSetRep(tuple((f"kp{i}", Point3.from_array(k)) for i, k in enumerate(kps)))
    if kind == RepKind.VECTOR:
        kps = _keypoints(obj, part)
        if len(kps) < 2:
            where = f"part '{part}' of '{object_id}'" if part else f"'{object_id}'"
            raise ToolkitError(f"{where} needs two keypoints to define a vector")
        return VectorRep(Point3.from_array(kps[0]), UnitVector3.from_array(kps[1] - kps[0]))
    if kind == RepKind.POSE:
        return PoseRep(obj.pose if part is None else obj.part_pose(part))
    if kind == RepKind.REGION:
        return crop_subimage(obs, object_id, part, "adaptive")
    if kind == RepKind.STATE_MACHINE:
        return extract_state(obs, object_id)
    if kind == RepKind.TOPO_ORDER:
        return extract_topo(obs, [object_id] + obs.snapshot.dependents(object_id))
    raise ToolkitError(f"unsupported representation kind '{kind}'")


# ---------------------------------------------------------------------------
# Noise
# ---------------------------------------------------------------------------

def _noisy_point(p: Point3, sigma: float, rng: np.random.Generator) -> Point3:
    if sigma <= 0:
        return p
    return Point3.from_array(p.as_array() + rng.normal(0.0, sigma, 3))


def apply_noise(value: RepresentationValue, tool: ToolSpec, rng: np.random.Generator, scale: float) -> RepresentationValue:
    sp = tool.sigma("gaussian_point") * scale
    sa = tool.sigma("gaussian_angle") * scale
    if isinstance(value, PointRep):
        return PointRep(_noisy_point(value.point, sp, rng))
    if isinstance(value, PointSetRep):
        return PointSetRep(tuple((label, _noisy_point(p, sp, rng)) for label, p in value.points))
    if isinstance(value, VectorRep):
        origin = _noisy_point(value.origin, sp, rng)
        direction = value.direction
        if sa > 0:
            r = Rotation.from_rotvec(rng.normal(0.0, sa, 3))
            direction = UnitVector3.from_array(r.rotate(direction.as_array()))
        return VectorRep(origin, direction)
    if isinstance(value, PoseRep):
        t = _noisy_point(value.pose.translation, sp, rng)
        rot = value.pose.rotation
        if sa > 0:
            rot = perturb_rotation(rot, rng.normal(0.0, sa, 3))
        return PoseRep(Pose(rot, t))
    return value


def _latency(tool: ToolSpec, rng: np.random.Generator) -> float:
    model = tool.latency_model
    if model.jitter_s <= 0:
        return model.mean_s
    return max(0.0, float(model.mean_s + model.jitter_s * rng.standard_normal()))


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------

def extract(
    tool: ToolSpec,
    obs: Observation,
    target: Union[str, RegionRep],
    seed: int,
    stage: int = 0,
    requirement: Optional[RepKind] = None,
    noise_scale: float = 1.0,
    capability_failures: bool = True,
    audit=None,
    part: Optional[str] = None,
) -> ExtractionRecord:
    """
    Run one simulated extractor against an object id (optionally one of its
    parts, at coarse granularity) or a cropped region.

    Soft failures (occlusion, capability draw, dropout) come back as
    ``succeeded=False``; an unknown target raises ToolkitError.
    """
    started = time.perf_counter()
    if isinstance(target, RegionRep):
        object_id, part, granularity = target.object_id, target.part, "fine"
    else:
        object_id, granularity = target, "coarse"
    obj = _object(obs, object_id)
    _check_part(obj, part)
    requirement = RepKind(requirement) if requirement is not None else tool.output_kind

    labels = ("extract", tool.name, object_id, part, granularity)
    u_success, u_dropout = rng_for(seed, *labels, "success").random(2)

    reason = None
    if not obs.visible(object_id) and not tool.occlusion_tolerant:
        reason = "occluded"
    elif capability_failures and u_success >= tool.capability(obj.object_class, requirement):
        reason = "capability"
    elif capability_failures and u_dropout < tool.dropout():
        reason = "dropout"

    value = None
    if reason is None:
        truth = ground_truth(obs, tool.output_kind, object_id, part)
        value = apply_noise(truth, tool, rng_for(seed, *labels, "noise"), noise_scale)

    record = ExtractionRecord(
        tool=tool.name,
        stage=stage,
        object_id=object_id,
        value=value,
        elapsed_s=_latency(tool, rng_for(seed, *labels, "latency")),
        succeeded=reason is None,
        timestamp=obs.timestamp,
        part=part,
        failure_reason=reason,
        wall_s=time.perf_counter() - started,
        requirement=requirement,
        granularity=granularity,
    )
    if reason is not None:
        logger.debug(f"{tool.name} failed on {object_id}{'/' + part if part else ''}: {reason}")
    if audit is not None:
        audit.append(record)
    return record


def crop_subimage(obs: Observation, object_id: str, part: Optional[str], padding: Padding = "adaptive") -> RegionRep:
    """Part (or whole-object) extent box in the world frame, inflated by ``padding`` on every side."""
    obj = _object(obs, object_id)
    if part is None:
        box = obj.box
    else:
        _check_part(obj, part)
        box = obj.part_box(part)
    lo, hi = np.asarray(box.lo), np.asarray(box.hi)
    if padding == "adaptive":
        pad = Config.ADAPTIVE_PADDING_FRACTION * float(np.max(hi - lo))
    else:
        pad = float(padding)
        if pad < 0:
            raise ToolkitError(f"padding must be non-negative, got {pad}")
    return RegionRep(object_id, part, Box(tuple(float(v) for v in lo - pad), tuple(float(v) for v in hi + pad)))


def extract_fine(
    reg: Registry,
    obs: Observation,
    object_id: str,
    part: Optional[str],
    requirement: RepKind,
    seed: int,
    stage: int = 0,
    p_succ: Optional[Mapping[str, float]] = None,
    tool: Optional[ToolSpec] = None,
    padding: Padding = "adaptive",
    noise_scale: float = 1.0,
    capability_failures: bool = True,
    audit=None,
) -> ExtractionRecord:
    """
    Crop the part region, extract inside it with reduced noise and return
    the record tagged with (object, part). Elapsed time includes the crop.
    """
    obj = _object(obs, object_id)
    cropper = crop_tool(reg)
    if cropper is None:
        raise ToolkitError("fine extraction needs a region-producing tool in the registry")
    region = crop_subimage(obs, object_id, part, padding)
    crop_elapsed = _latency(cropper, rng_for(seed, "crop", cropper.name, object_id, part))
    if tool is None:
        if p_succ is None:
            p_succ = {t.name: t.capability(obj.object_class, requirement) for t in reg.tools}
        tool = reg.tool(select_with_table(reg, requirement, obj, stage, p_succ, "fine").tool)
    record = extract(
        tool,
        obs,
        region,
        seed,
        stage=stage,
        requirement=requirement,
        noise_scale=noise_scale * tool.fine_scale,
        capability_failures=capability_failures,
    )
    record = _with_elapsed(record, record.elapsed_s + crop_elapsed, cropper.name)
    if audit is not None:
        audit.append(record)
    return record


def _with_elapsed(record: ExtractionRecord, elapsed: float, crop_name: str) -> ExtractionRecord:
    return replace(record, elapsed_s=elapsed, extra={**record.extra, "crop_tool": crop_name})


def extract_state(obs: Observation, object_id: str) -> StateMachineRef:
    """Current discrete state, noise-free."""
    obj = _object(obs, object_id)
    if obj.states is None:
        raise ToolkitError(f"object '{object_id}' has no state machine")
    return StateMachineRef(object_id, obj.state)


def extract_topo(obs: Observation, object_ids: Iterable[str]) -> TopoOrderRep:
    """Support-graph order restricted to ``object_ids``, top of stack first, ties by id."""
    ids = list(dict.fromkeys(object_ids))
    for oid in ids:
        _object(obs, oid)
    full = nx.DiGraph()
    for o in obs.snapshot.objects:
        full.add_node(o.id)
        for s in o.supports:
            full.add_edge(o.id, s)
    if not nx.is_directed_acyclic_graph(full):
        raise ToolkitError("internal error: support graph contains a cycle")
    closure = nx.transitive_closure_dag(full)
    order = list(nx.lexicographical_topological_sort(closure.subgraph(ids), key=str))
    return TopoOrderRep(tuple(order))
