"""
Benchmark configuration, trial results and report models.
"""
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from planner.planner_models import SolverConfig, TrackConfig
from utils.config import Config


class NoiseProfile(BaseModel):
    name: str = "custom"
    noise_scale: float = Field(1.0, ge=0)
    capability_failures: bool = True
    occlusion_probability: float = Field(0.0, ge=0, le=1)
    occlusion_from_s: float = Field(0.0, ge=0)


NOISE_PROFILES: Dict[str, NoiseProfile] = {
    "none": NoiseProfile(name="none", noise_scale=0.0, capability_failures=False, occlusion_probability=0.0),
    "default": NoiseProfile(name="default", occlusion_probability=0.02),
    "high_occlusion": NoiseProfile(name="high_occlusion", occlusion_probability=0.6),
}


def resolve_noise(value: Union[str, NoiseProfile]) -> NoiseProfile:
    if isinstance(value, NoiseProfile):
        return value
    if value not in NOISE_PROFILES:
        raise ValueError(f"unknown noise profile '{value}'; known: {', '.join(NOISE_PROFILES)}")
    return NOISE_PROFILES[value]


class AblationMode(str, Enum):
    FULL = "full"
    NO_COG = "no_cog"
    FIXED_SP = "fixed_sp"
    FIXED_VPV = "fixed_vpv"
    NO_COG_FIXED_SP = "no_cog_fixed_sp"
    NO_COG_FIXED_VPV = "no_cog_fixed_vpv"

    @property
    def single_shot(self) -> bool:
        return self.value.startswith("no_cog")

    @property
    def selection(self) -> str:
        if self.value.endswith("fixed_sp"):
            return "fixed_sp"
        if self.value.endswith("fixed_vpv"):
            return "fixed_vpv"
        return "adaptive"


class TaskEntry(BaseModel):
    name: str
    scene: Path
    script: Path


class BenchmarkConfig(BaseModel):
    schema_version: Literal[1] = Field(1, alias="schema")
    tasks: List[TaskEntry] = Field(min_length=1)
    registry: Path = Config.REGISTRY_FILE
    mode: AblationMode = AblationMode.FULL
    trials: int = Field(10, ge=1)
    base_seed: int = 0
    repeats: int = Field(1, ge=1)
    workers: int = Field(Config.MAX_TRIAL_WORKERS, ge=1)
    noise: Union[str, NoiseProfile] = "default"
    solver: SolverConfig = SolverConfig()
    track: TrackConfig = TrackConfig()
    no_cog_schema_error_prob: float = Field(Config.NO_COG_SCHEMA_ERROR_PROB, ge=0, le=1)
    backend: Literal["oracle", "remote"] = "oracle"
    full_rotation: bool = False

    model_config = ConfigDict(populate_by_name=True)

    @model_validator(mode="after")
    def _known_noise(self):
        resolve_noise(self.noise)
        return self

    @property
    def noise_profile(self) -> NoiseProfile:
        return resolve_noise(self.noise)

    def seeds(self, repeat: int) -> List[int]:
        return [self.base_seed + repeat * self.trials + i for i in range(self.trials)]


class TrialConfig(BaseModel):
    task: TaskEntry
    registry: Path = Config.REGISTRY_FILE
    mode: AblationMode = AblationMode.FULL
    seed: int = 0
    noise: NoiseProfile = NOISE_PROFILES["default"]
    solver: SolverConfig = SolverConfig()
    track: TrackConfig = TrackConfig()
    no_cog_schema_error_prob: float = Field(Config.NO_COG_SCHEMA_ERROR_PROB, ge=0, le=1)
    backend: Literal["oracle", "remote"] = "oracle"
    full_rotation: bool = False

    @classmethod
    def from_benchmark(cls, cfg: BenchmarkConfig, task: TaskEntry, seed: int) -> "TrialConfig":
        return cls(
            task=task,
            registry=cfg.registry,
            mode=cfg.mode,
            seed=seed,
            noise=cfg.noise_profile,
            solver=cfg.solver,
            track=cfg.track,
            no_cog_schema_error_prob=cfg.no_cog_schema_error_prob,
            backend=cfg.backend,
            full_rotation=cfg.full_rotation,
        )


class ErrorCategory(str, Enum):
    PLANNING = "planning"
    TOOLKIT_EXTRACTION = "toolkit_extraction"
    REPRESENTATION_TRACKING = "representation_tracking"
    ACTION_GENERATION = "action_generation"
    OTHER = "other"


class TrialResult(BaseModel):
    task: str
    seed: int
    success: bool
    sim_time_s: float
    extraction_time_s: float = 0.0
    grounding_time_s: float = 0.0
    failure_category: Optional[ErrorCategory] = None
    failure_stage: Optional[int] = None
    failure_message: Optional[str] = None
    re_extractions: int = 0
    stages: List[Dict[str, Any]] = []
    repeat: int = 0

    @model_validator(mode="after")
    def _category_iff_failure(self):
        if self.success == (self.failure_category is not None):
            raise ValueError("failure_category must be set exactly when the trial failed")
        return self


class TaskSummary(BaseModel):
    task: str
    trials: int
    successes: int
    success_rate: float
    success_std: float = 0.0
    mean_time_s: float
    time_std: float = 0.0
    mean_extraction_time_s: float = 0.0
    mean_grounding_time_s: float = 0.0


class BenchmarkReport(BaseModel):
    mode: AblationMode
    noise: str
    trials_per_task: int
    repeats: int
    seeds: List[int]
    tasks: List[TaskSummary]
    total: TaskSummary
    failures: int
    error_histogram: Dict[ErrorCategory, int]
    results: List[TrialResult]
    config: Dict[str, Any] = {}

    @model_validator(mode="after")
    def _accounting(self):
        if sum(self.error_histogram.values()) != self.failures:
            raise ValueError("error histogram does not sum to the failure count")
        if self.total.successes + self.failures != self.total.trials:
            raise ValueError("successes and failures do not add up to the trial count")
        return self

