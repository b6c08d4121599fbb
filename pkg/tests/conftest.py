from pathlib import Path

import pytest

from controllers.task_script import task_load
from harness.harness_models import NOISE_PROFILES, TaskEntry, TrialConfig
from scene.scene_models import SceneFileModel
from scene.scene_sim import scene_from_model, scene_load
from toolkit.registry import registry_load

DATA_DIR = Path(__file__).resolve().parent.parent / "data"
TASKS = ("pick_place", "plush_upright", "tool_insert", "drawer", "stack")

WORKSPACE = {"min": [-0.6, -0.6, 0.0], "max": [0.6, 0.6, 0.6]}
IDENTITY = [1.0, 0.0, 0.0, 0.0]


@pytest.fixture
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture
def registry():
    return registry_load(DATA_DIR / "registry.json")


@pytest.fixture
def load_scene():
    def _load(name: str):
        return scene_load(DATA_DIR / "scenes" / f"{name}.json")
    return _load


@pytest.fixture
def load_task():
    def _load(name: str):
        return task_load(DATA_DIR / "tasks" / f"{name}.yaml")
    return _load


@pytest.fixture
def task_entry():
    def _entry(name: str) -> TaskEntry:
        return TaskEntry(
            name=name,
            scene=DATA_DIR / "scenes" / f"{name}.json",
            script=DATA_DIR / "tasks" / f"{name}.yaml",
        )
    return _entry


@pytest.fixture
def trial_config(task_entry):
    def _config(name: str, seed: int = 0, noise: str = "none", **kwargs) -> TrialConfig:
        return TrialConfig(
            task=task_entry(name),
            registry=DATA_DIR / "registry.json",
            seed=seed,
            noise=NOISE_PROFILES[noise],
            **kwargs,
        )
    return _config


@pytest.fixture
def make_scene():
    """Build a scene from object dicts in the scene file format."""
    def _make(objects, ee=(0.0, 0.0, 0.4), placement=None):
        raw = {
            "schema": 1,
            "workspace": WORKSPACE,
            "ee_pose": {"quaternion": IDENTITY, "translation": list(ee)},
            "objects": objects,
        }
        if placement is not None:
            raw["placement"] = placement
        return scene_from_model(SceneFileModel.model_validate(raw))
    return _make


def block(object_id, xyz, half=0.025, **extra):
    entry = {
        "id": object_id,
        "class": "block",
        "pose": {"quaternion": IDENTITY, "translation": list(xyz)},
        "extent": [half, half, half],
    }
    entry.update(extra)
    return entry
