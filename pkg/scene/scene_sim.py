"""
Kinematic scene simulator: load, randomize, step and observe.

The simulator supplies ground truth for the simulated extractors and
applies end-effector trajectories to the world. There is no physics:
grasping is proximity plus a close command, released objects drop
vertically onto the highest surface below them.
"""
import math
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError
from scipy.spatial.transform import Rotation as ScipyRotation

from geometry.se3 import Box, GripperCommand, Pose, Rotation, Trajectory, world_half_extents
from scene.scene_models import SceneFileModel, point, pose_from_field
from scene.scene_state import (
    Articulation,
    Grasp,
    Observation,
    OcclusionModel,
    SceneObject,
    ScenePart,
    SceneState,
    StateMachineSpec,
    check_support_graph,
)
from utils.config import Config
from utils.errors import ConfigError, GeometryError, PlacementError, SceneError
from utils.logger import get_logger
from utils.seeding import rng_for
from utils.serialization import dumps, format_validation_error, read_json_file

logger = get_logger(__name__)


# ---------------------------------------------------------------------------
# Loading and validation
# ---------------------------------------------------------------------------

def _check_keypoints(owner: str, keypoints, extent, what: str):
    limit = 2.0 * np.asarray(extent, dtype=float) + 1e-9
    for k in keypoints:
        if np.any(np.abs(k.as_array()) > limit):
            raise SceneError(f"object '{owner}': {what} keypoint {k} lies outside twice its extent", object_id=owner)


def validate_scene(objects: List[SceneObject]):
    """Check every scene invariant; errors name the offending object id."""
    seen = set()
    for obj in objects:
        if obj.id in seen:
            raise SceneError(f"duplicate object id '{obj.id}'", object_id=obj.id)
        seen.add(obj.id)
    check_support_graph(objects)
    for obj in objects:
        _check_keypoints(obj.id, obj.keypoints, obj.extent, "object")
        names = set()
        for part in obj.parts:
            if part.name in names:
                raise SceneError(f"object '{obj.id}': duplicate part '{part.name}'", object_id=obj.id)
            names.add(part.name)
            _check_keypoints(obj.id, part.keypoints, part.extent, f"part '{part.name}'")
        if obj.states is not None:
            obj.states.validate(obj.id)
            if obj.state not in obj.states.states:
                raise SceneError(f"object '{obj.id}': current state '{obj.state}' is not declared", object_id=obj.id)
        elif obj.state is not None:
            raise SceneError(f"object '{obj.id}' has a state but no state machine", object_id=obj.id)
        if obj.articulation is not None:
            if obj.articulation.part not in names:
                raise SceneError(
                    f"object '{obj.id}': articulation drives unknown part '{obj.articulation.part}'",
                    object_id=obj.id,
                )
            if obj.articulation.opening > obj.articulation.depth:
                raise SceneError(f"object '{obj.id}': opening exceeds depth", object_id=obj.id)


def _object_from_model(m) -> SceneObject:
    states = None
    if m.states is not None:
        states = StateMachineSpec(
            states=tuple(m.states.states),
            initial=m.states.initial,
            transitions=tuple(tuple(t) for t in m.states.transitions),
        )
    articulation = None
    if m.articulation is not None:
        a = m.articulation
        axis = np.asarray(a.axis, dtype=float)
        if np.linalg.norm(axis) < 1e-12:
            raise SceneError(f"object '{m.id}': articulation axis must be non-zero", object_id=m.id)
        axis = axis / np.linalg.norm(axis)
        articulation = Articulation(
            part=a.part,
            axis=tuple(float(v) for v in axis),
            depth=a.depth,
            opening=a.opening,
            open_fraction=a.open_fraction,
            action=a.action,
            close_action=a.close_action,
        )
    parts = tuple(
        ScenePart(
            name=p.name,
            local_pose=pose_from_field(p.pose),
            keypoints=tuple(point(k) for k in p.keypoints),
            extent=tuple(float(v) for v in p.extent),
        )
        for p in m.parts
    )
    return SceneObject(
        id=m.id,
        label=m.label or m.id,
        object_class=m.object_class,
        pose=pose_from_field(m.pose),
        extent=tuple(float(v) for v in m.extent),
        keypoints=tuple(point(k) for k in m.keypoints),
        parts=parts,
        states=states,
        state=m.state if m.state is not None else (states.initial if states else None),
        supports=tuple(m.supports),
        articulation=articulation,
        container_floor=m.container_floor,
    )


def scene_from_model(model: SceneFileModel) -> SceneState:
    objects = [_object_from_model(m) for m in model.objects]
    validate_scene(objects)
    workspace = Box(tuple(model.workspace.min), tuple(model.workspace.max))
    if workspace.volume <= 0:
        raise SceneError("workspace box must have positive volume")
    if model.placement is not None:
        placement = Box(tuple(model.placement.min), tuple(model.placement.max))
    else:
        lo, hi = workspace.lo, workspace.hi
        placement = Box((lo[0], lo[1], lo[2]), (hi[0], hi[1], lo[2]))
    if model.ee_pose is not None:
        ee = pose_from_field(model.ee_pose)
    else:
        c = 0.5 * (np.asarray(workspace.lo) + np.asarray(workspace.hi))
        ee = Pose.from_translation(c[0], c[1], workspace.lo[2] + 2.0 * (workspace.hi[2] - workspace.lo[2]) / 3.0)
    return SceneState(objects=tuple(objects), workspace=workspace, placement=placement, ee_pose=ee)


def scene_load(path: Union[str, Path]) -> SceneState:
    """Load and validate a scene file."""
    raw = read_json_file(path)
    try:
        model = SceneFileModel.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"{path}: invalid scene file: {format_validation_error(e)}") from e
    try:
        state = scene_from_model(model)
    except (SceneError, GeometryError) as e:
        raise ConfigError(f"{path}: {e.message}") from e
    logger.debug(f"Loaded scene {path} with {len(state.objects)} objects")
    return state


def _pose_rows(p: Pose) -> List[List[float]]:
    return p.as_rows()


def scene_to_dict(s: SceneState) -> Dict[str, Any]:
    objects = []
    for o in s.objects:
        entry: Dict[str, Any] = {
            "id": o.id,
            "label": o.label,
            "class": o.object_class,
            "pose": _pose_rows(o.pose),
            "extent": [float(v) for v in o.extent],
            "keypoints": [[k.x, k.y, k.z] for k in o.keypoints],
            "parts": [
                {
                    "name": p.name,
                    "pose": _pose_rows(p.local_pose),
                    "keypoints": [[k.x, k.y, k.z] for k in p.keypoints],
                    "extent": [float(v) for v in p.extent],
                }
                for p in o.parts
            ],
            "supports": list(o.supports),
        }
        if o.states is not None:
            entry["states"] = {
                "states": list(o.states.states),
                "initial": o.states.initial,
                "transitions": [list(t) for t in o.states.transitions],
            }
            entry["state"] = o.state
        if o.articulation is not None:
            a = o.articulation
            entry["articulation"] = {
                "part": a.part,
                "axis": list(a.axis),
                "depth": a.depth,
                "opening": a.opening,
                "open_fraction": a.open_fraction,
                "action": a.action,
                "close_action": a.close_action,
            }
        if o.container_floor is not None:
            entry["container_floor"] = o.container_floor
        objects.append(entry)
    return {
        "schema": 1,
        "units": "meters",
        "workspace": {"min": list(s.workspace.lo), "max": list(s.workspace.hi)},
        "placement": {"min": list(s.placement.lo), "max": list(s.placement.hi)},
        "ee_pose": _pose_rows(s.ee_pose),
        "attached": s.attached,
        "clock": s.clock,
        "objects": objects,
    }


def scene_dump(s: SceneState) -> bytes:
    """Canonical serialized form; equal states give equal bytes."""
    return dumps(scene_to_dict(s))


# ---------------------------------------------------------------------------
# Randomization
# ---------------------------------------------------------------------------

def _footprints_overlap(c1, h1, c2, h2, clearance: float) -> bool:
    return (abs(c1[0] - c2[0]) < h1[0] + h2[0] + clearance
            and abs(c1[1] - c2[1]) < h1[1] + h2[1] + clearance)


def scene_randomize(
    s: SceneState,
    seed: int,
    bounds: Optional[Box] = None,
    full_rotation: bool = False,
    clearance: float = Config.PLACEMENT_CLEARANCE_M,
    max_attempts: int = Config.PLACEMENT_MAX_ATTEMPTS,
) -> SceneState:
    """
    Re-place every free-standing object uniformly inside ``bounds``.

    A sampled position is the object's base point: footprint center in x/y,
    bottom face height in z. Yaw is uniform in [0, 2*pi) and applied on top
    of the file orientation; ``full_rotation`` samples SO(3) instead.
    Objects resting on others move rigidly with their root supporter.
    """
    bounds = bounds or s.placement
    lo = np.asarray(bounds.lo, dtype=float)
    hi = np.asarray(bounds.hi, dtype=float)
    if np.any(hi < lo):
        raise SceneError(f"placement bounds are inverted: {bounds.lo} > {bounds.hi}")

    rng = rng_for(seed, "randomize")
    placed: List[Tuple[np.ndarray, np.ndarray]] = []
    root_moves: Dict[str, Pose] = {}

    for obj in s.objects:
        if obj.supports:
            continue
        for _ in range(max_attempts):
            base = rng.uniform(lo, hi)
            if full_rotation:
                rot = Rotation.from_scipy(ScipyRotation.random(None, rng))
            else:
                rot = Rotation.about_z(rng.uniform(0.0, 2.0 * math.pi)) * obj.pose.rotation
            half = world_half_extents(rot.q, obj.extent)
            if not any(_footprints_overlap(base[:2], half[:2], c, h, clearance) for c, h in placed):
                break
        else:
            logger.error(f"Placement failed for '{obj.id}' after {max_attempts} attempts")
            raise PlacementError(f"could not place '{obj.id}' after {max_attempts} attempts", object_id=obj.id)
        placed.append((base[:2], half[:2]))
        new_pose = Pose(rot, point((base[0], base[1], base[2] + half[2])))
        root_moves[obj.id] = new_pose.compose(obj.pose.inverse())

    objects = []
    for obj in s.objects:
        delta = root_moves[s.root_of(obj.id)]
        objects.append(obj.moved(delta.compose(obj.pose)))
    return replace(s, objects=tuple(objects))


# ---------------------------------------------------------------------------
# Stepping
# ---------------------------------------------------------------------------

def _fire_transitions(obj: SceneObject) -> SceneObject:
    art = obj.articulation
    if obj.states is None or obj.state is None:
        return obj
    # a pull landing exactly on the threshold leaves the state unchanged
    action = art.action if art.opening > art.threshold + Config.GEOMETRY_TOL else art.close_action
    nxt = obj.states.next_state(obj.state, action)
    if nxt is not None and nxt != obj.state:
        logger.debug(f"'{obj.id}' {obj.state} -> {nxt} on '{action}' (opening {art.opening:.3f} m)")
        return replace(obj, state=nxt)
    return obj


def _move_ee(state: SceneState, pose: Pose) -> SceneState:
    state = replace(state, ee_pose=pose)
    g = state.grasp
    if g is None:
        return state
    obj = state.get(g.object_id)
    if g.mode == "rigid":
        return state.with_object(obj.moved(pose.compose(g.relative)))
    art = obj.articulation
    axis_world = obj.pose.rotation.rotate(art.axis)
    travel = float(np.dot(pose.position - g.ee_at_grasp.position, axis_world))
    opening = min(max(g.opening_at_grasp + travel, 0.0), art.depth)
    obj = replace(obj, articulation=replace(art, opening=opening))
    return state.with_object(_fire_transitions(obj))


def _grasp_points(obj: SceneObject) -> List[np.ndarray]:
    return [obj.center] + [obj.part_pose(p.name).position for p in obj.parts]


def _close(state: SceneState, radius: float) -> SceneState:
    if state.grasp is not None:
        return state
    ee = state.ee_pose.position
    best: Optional[Tuple[float, str]] = None
    for obj in state.objects:
        if state.resting_on(obj.id):
            continue
        d = min(float(np.linalg.norm(c - ee)) for c in _grasp_points(obj))
        if d <= radius and (best is None or (d, obj.id) < best):
            best = (d, obj.id)
    if best is None:
        logger.debug(f"Gripper closed at {np.round(ee, 4).tolist()} with nothing in reach")
        return state
    obj = state.get(best[1])
    relative = state.ee_pose.inverse().compose(obj.pose)
    if obj.articulation is not None:
        grasp = Grasp(obj.id, "slide", relative, state.ee_pose, obj.articulation.opening)
        return replace(state, grasp=grasp)
    grasp = Grasp(obj.id, "rigid", relative, state.ee_pose)
    state = state.with_object(replace(obj, supports=()))
    return replace(state, grasp=grasp)


def _settle(state: SceneState, obj: SceneObject, tol: float) -> SceneState:
    c = obj.center
    half = obj.half_extents
    bottom = c[2] - half[2]
    best: Optional[Tuple[float, str, float]] = None
    for other in state.objects:
        if other.id == obj.id:
            continue
        oc, oh = other.center, other.half_extents
        if abs(c[0] - oc[0]) > oh[0] or abs(c[1] - oc[1]) > oh[1]:
            continue
        top = other.top_z
        if top > bottom + tol:
            continue
        surface = top
        if other.container_floor is not None and half[0] <= oh[0] and half[1] <= oh[1]:
            surface = other.bottom_z + other.container_floor
        if best is None or (top, other.id) > (best[0], best[1]):
            best = (top, other.id, surface)
    if best is None:
        z = state.workspace.lo[2] + half[2]
        supports: Tuple[str, ...] = ()
    else:
        z = best[2] + half[2]
        supports = (best[1],)
    settled = replace(obj, pose=Pose(obj.pose.rotation, point((c[0], c[1], z))), supports=supports)
    logger.debug(f"'{obj.id}' settled at z={z:.4f} on {supports[0] if supports else 'floor'}")
    return state.with_object(settled)


def _open(state: SceneState, tol: float) -> SceneState:
    g = state.grasp
    if g is None:
        return state
    state = replace(state, grasp=None)
    if g.mode != "rigid":
        return state
    return _settle(state, state.get(g.object_id), tol)


def scene_step(
    s: SceneState,
    tau: Trajectory,
    grasp_radius: float = Config.GRASP_RADIUS_M,
    speed: float = Config.NOMINAL_SPEED_MPS,
    settle_tolerance: float = Config.SETTLE_TOLERANCE_M,
) -> SceneState:
    """Apply a trajectory; the clock advances by path length over nominal speed."""
    for i, wp in enumerate(tau.waypoints):
        if not s.workspace.contains(wp.pose.position):
            raise SceneError(
                f"waypoint {i} at {np.round(wp.pose.position, 4).tolist()} lies outside the workspace",
                waypoint_index=i,
            )
    state = s
    travelled = 0.0
    for wp in tau.waypoints:
        travelled += float(np.linalg.norm(wp.pose.position - state.ee_pose.position))
        state = _move_ee(state, wp.pose)
        if wp.gripper == GripperCommand.CLOSE:
            state = _close(state, grasp_radius)
        elif wp.gripper == GripperCommand.OPEN:
            state = _open(state, settle_tolerance)
    return state.advanced(travelled / speed)


# ---------------------------------------------------------------------------
# Observation
# ---------------------------------------------------------------------------

def observe(
    s: SceneState,
    occlusion_model: Optional[OcclusionModel] = None,
    call_index: Any = 0,
    at_time: Optional[float] = None,
) -> Observation:
    """
    Snapshot the scene. Each object is occluded independently with the
    model's probability once the timestamp reaches ``active_from_s``;
    draws are keyed by (model seed, call_index, object id).
    """
    model = occlusion_model or OcclusionModel()
    t = s.clock if at_time is None else at_time
    occluded = set()
    if model.probability > 0.0 and t >= model.active_from_s:
        for oid in s.ids:
            if rng_for(model.seed, "occlusion", call_index, oid).random() < model.probability:
                occluded.add(oid)
    return Observation(snapshot=s, occluded_ids=frozenset(occluded), timestamp=t)
