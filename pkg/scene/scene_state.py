"""
Runtime scene types.

All values are frozen; scene operations return new SceneState instances.
"""
from dataclasses import dataclass, field, replace
from typing import FrozenSet, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from geometry.se3 import Box, Point3, Pose, world_half_extents
from utils.errors import SceneError

Vec3 = Tuple[float, float, float]


@dataclass(frozen=True)
class StateMachineSpec:
    states: Tuple[str, ...]
    initial: str
    transitions: Tuple[Tuple[str, str, str], ...] = ()

    def validate(self, owner: str):
        if self.initial not in self.states:
            raise SceneError(f"object '{owner}': initial state '{self.initial}' is not a declared state", object_id=owner)
        seen = set()
        for src, action, dst in self.transitions:
            if src not in self.states or dst not in self.states:
                raise SceneError(
                    f"object '{owner}': transition ({src}, {action}, {dst}) uses an undeclared state",
                    object_id=owner,
                )
            if (src, action) in seen:
                raise SceneError(
                    f"object '{owner}': transition from '{src}' on '{action}' is not deterministic",
                    object_id=owner,
                )
            seen.add((src, action))

    def next_state(self, current: str, action: str) -> Optional[str]:
        for src, act, dst in self.transitions:
            if src == current and act == action:
                return dst
        return None


@dataclass(frozen=True)
class ScenePart:
    name: str
    local_pose: Pose
    keypoints: Tuple[Point3, ...] = ()
    extent: Vec3 = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class Articulation:
    """Prismatic joint of a drawer-like object, driven by pulling one part."""

    part: str
    axis: Vec3
    depth: float
    opening: float = 0.0
    open_fraction: float = 1.0 / 3.0
    action: str = "pull"
    close_action: str = "push"

    @property
    def threshold(self) -> float:
        return self.open_fraction * self.depth


@dataclass(frozen=True)
class SceneObject:
    id: str
    label: str
    object_class: str
    pose: Pose
    extent: Vec3
    keypoints: Tuple[Point3, ...] = ()
    parts: Tuple[ScenePart, ...] = ()
    states: Optional[StateMachineSpec] = None
    state: Optional[str] = None
    supports: Tuple[str, ...] = ()
    articulation: Optional[Articulation] = None
    # Height of the inner floor above the bottom face, for open containers
    container_floor: Optional[float] = None

    @property
    def center(self) -> np.ndarray:
        return self.pose.translation.as_array()

    @property
    def half_extents(self) -> np.ndarray:
        return world_half_extents(self.pose.rotation.q, self.extent)

    @property
    def bottom_z(self) -> float:
        return float(self.center[2] - self.half_extents[2])

    @property
    def top_z(self) -> float:
        return float(self.center[2] + self.half_extents[2])

    @property
    def box(self) -> Box:
        return Box.from_center(self.center, self.half_extents)

    def part(self, name: str) -> ScenePart:
        for p in self.parts:
            if p.name == name:
                return p
        raise SceneError(f"object '{self.id}' has no part '{name}'", object_id=self.id)

    def part_pose(self, name: str) -> Pose:
        """World pose of a part, including the articulation offset."""
        part = self.part(name)
        local = part.local_pose
        if self.articulation is not None and self.articulation.part == name:
            offset = np.asarray(self.articulation.axis) * self.articulation.opening
            local = Pose(local.rotation, Point3.from_array(local.translation.as_array() + offset))
        return self.pose.compose(local)

    def world_keypoints(self, part: Optional[str] = None) -> List[np.ndarray]:
        if part is None:
            return [self.pose.transform_array(k.as_array()) for k in self.keypoints]
        frame = self.part_pose(part)
        return [frame.transform_array(k.as_array()) for k in self.part(part).keypoints]

    def part_box(self, name: str) -> Box:
        frame = self.part_pose(name)
        half = world_half_extents(frame.rotation.q, self.part(name).extent)
        return Box.from_center(frame.translation.as_array(), half)

    def moved(self, pose: Pose) -> "SceneObject":
        return replace(self, pose=pose)


@dataclass(frozen=True)
class Grasp:
    """Active grasp. ``relative`` is the object pose in the end-effector frame."""

    object_id: str
    mode: str
    relative: Pose
    ee_at_grasp: Pose
    opening_at_grasp: float = 0.0


@dataclass(frozen=True)
class SceneState:
    objects: Tuple[SceneObject, ...]
    workspace: Box
    placement: Box
    ee_pose: Pose = field(default_factory=Pose.identity)
    grasp: Optional[Grasp] = None
    clock: float = 0.0

    @property
    def attached(self) -> Optional[str]:
        return self.grasp.object_id if self.grasp else None

    @property
    def ids(self) -> List[str]:
        return [o.id for o in self.objects]

    def has(self, object_id: str) -> bool:
        return any(o.id == object_id for o in self.objects)

    def get(self, object_id: str) -> SceneObject:
        for o in self.objects:
            if o.id == object_id:
                return o
        raise SceneError(f"unknown object id '{object_id}'", object_id=object_id)

    def with_object(self, obj: SceneObject) -> "SceneState":
        return replace(self, objects=tuple(obj if o.id == obj.id else o for o in self.objects))

    def resting_on(self, object_id: str) -> List[str]:
        return [o.id for o in self.objects if object_id in o.supports]

    def dependents(self, object_id: str) -> List[str]:
        """Every object transitively resting on ``object_id``, in scene order."""
        found: List[str] = []
        frontier = [object_id]
        while frontier:
            current = frontier.pop()
            for other in self.resting_on(current):
                if other not in found:
                    found.append(other)
                    frontier.append(other)
        order = {oid: i for i, oid in enumerate(self.ids)}
        return sorted(found, key=order.__getitem__)

    def root_of(self, object_id: str) -> str:
        current = self.get(object_id)
        while current.supports:
            current = self.get(current.supports[0])
        return current.id

    def advanced(self, seconds: float) -> "SceneState":
        if seconds < 0:
            raise SceneError("clock cannot move backwards")
        return replace(self, clock=self.clock + seconds)


@dataclass(frozen=True)
class OcclusionModel:
    probability: float = 0.0
    active_from_s: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.probability <= 1.0):
            raise SceneError(f"occlusion probability must lie in [0, 1], got {self.probability}")


@dataclass(frozen=True)
class Observation:
    snapshot: SceneState
    occluded_ids: FrozenSet[str] = frozenset()
    timestamp: float = 0.0

    def visible(self, object_id: str) -> bool:
        return object_id not in self.occluded_ids


def check_support_graph(objects: Sequence[SceneObject]):
    """Raise SceneError on dangling or cyclic support references."""
    ids = {o.id for o in objects}
    graph = nx.DiGraph()
    graph.add_nodes_from(ids)
    for o in objects:
        for s in o.supports:
            if s not in ids:
                raise SceneError(f"object '{o.id}' rests on unknown object '{s}'", object_id=s)
            if s == o.id:
                raise SceneError(f"object '{o.id}' cannot rest on itself", object_id=o.id)
            graph.add_edge(o.id, s)
    try:
        cycle = nx.find_cycle(graph)
    except nx.NetworkXNoCycle:
        return
    raise SceneError(f"support cycle through '{cycle[0][0]}'", object_id=cycle[0][0])
