"""
Task success predicates, registered by id and referenced from task scripts.
"""
from typing import Any, Callable, Dict, List

import numpy as np

from geometry.se3 import rotation_geodesic
from scene.scene_state import SceneState
from utils.errors import ConfigError

Predicate = Callable[..., bool]

PREDICATES: Dict[str, Predicate] = {}


def register(name: str):
    def wrap(fn: Predicate) -> Predicate:
        PREDICATES[name] = fn
        return fn
    return wrap


@register("rests_on")
def rests_on(s: SceneState, object: str, support: str) -> bool:
    """Released and resting directly on ``support``."""
    return s.attached != object and support in s.get(object).supports


@register("aligned_rests_on")
def aligned_rests_on(s: SceneState, object: str, support: str, reference: str, tolerance: float = 0.2) -> bool:
    if not rests_on(s, object, support):
        return False
    return rotation_geodesic(s.get(object).pose.rotation, s.get(reference).pose.rotation) <= tolerance


@register("inserted")
def inserted(s: SceneState, object: str, container: str, part: str, tolerance: float = 0.1) -> bool:
    """Resting in ``container`` with the part's keypoint direction pointing down."""
    if not rests_on(s, object, container):
        return False
    obj = s.get(object)
    kps = obj.world_keypoints(part)
    direction = kps[1] - kps[0]
    cos = float(np.dot(direction, [0.0, 0.0, -1.0]) / np.linalg.norm(direction))
    return float(np.arccos(np.clip(cos, -1.0, 1.0))) <= tolerance and obj.bottom_z < s.get(container).top_z


@register("state_is")
def state_is(s: SceneState, object: str, state: str) -> bool:
    return s.get(object).state == state


@register("all_on")
def all_on(s: SceneState, objects: List[str], support: str) -> bool:
    """Every listed object is released and transitively supported by ``support``."""
    below = set(s.dependents(support))
    return s.attached is None and all(o in below for o in objects)


def evaluate_success(s: SceneState, predicate: str, args: Dict[str, Any]) -> bool:
    fn = PREDICATES.get(predicate)
    if fn is None:
        raise ConfigError(f"unknown success predicate '{predicate}'; known: {', '.join(sorted(PREDICATES))}")
    try:
        return bool(fn(s, **args))
    except TypeError as e:
        raise ConfigError(f"bad arguments for predicate '{predicate}': {e}") from e
