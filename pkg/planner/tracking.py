"""
Representation acquisition and periodic re-extraction.

All times are simulated seconds. Acquisition advances the stage clock by
the extraction latencies; re-extractions during motion run alongside it.
"""
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Mapping, Optional, Union

from dsl.evaluator import BindingSpec, ConstraintFn, EvalContext, context_for
from geometry.se3 import Pose
from planner.planner_models import TrackConfig
from scene.scene_state import OcclusionModel, SceneState
from scene.scene_sim import observe
from toolkit.extractors import extract, extract_fine
from toolkit.toolkit_models import ExtractionRecord, Registry, RepresentationValue, ToolSelection
from utils.errors import ExtractionFailure, StaleRepresentationError, ToolkitError
from utils.logger import get_logger
from utils.seeding import derive_seed

logger = get_logger(__name__)

# A fixed scene, or the scene at a given simulated time
SceneSource = Union[SceneState, Callable[[float], SceneState]]


@dataclass(frozen=True)
class TrackingEvent:
    time: float
    binding_key: str
    kind: str  # acquired | failed | refreshed | stale
    detail: str = ""

    def to_dict(self) -> dict:
        return {"time": self.time, "binding": self.binding_key, "kind": self.kind, "detail": self.detail}


@dataclass
class Acquisition:
    values: Dict[str, RepresentationValue]
    frames: Dict[str, Pose]
    clock: float
    records: List[ExtractionRecord] = field(default_factory=list)


class Tracker:
    """
    Extracts bound representations with their selected tools and keeps
    them fresh while a stage executes. The latest successful value of
    each binding is held in ``current`` and handed to the evaluator
    through ``context``.
    """

    def __init__(
        self,
        registry: Registry,
        selections: Mapping[str, ToolSelection],
        config: TrackConfig,
        stage: int,
        seed: int = 0,
        occlusion: Optional[OcclusionModel] = None,
        noise_scale: float = 1.0,
        capability_failures: bool = True,
        audit=None,
    ):
        self.registry = registry
        self.selections = selections
        self.config = config
        self.stage = stage
        self.seed = seed
        self.occlusion = occlusion or OcclusionModel()
        self.noise_scale = noise_scale
        self.capability_failures = capability_failures
        self.audit = audit
        self.events: List[TrackingEvent] = []
        self.re_extractions = 0
        self.current: Dict[str, RepresentationValue] = {}
        self.current_frames: Dict[str, Pose] = {}
        self._last_fresh: Dict[str, float] = {}

    def context(self, f: ConstraintFn, ee_pose: Pose) -> EvalContext:
        return context_for(f, self.current, ee_pose, self.current_frames)

    def _store(self, scene: SceneState, key: str, binding: BindingSpec, value: RepresentationValue, t: float):
        self.current[key] = value
        self._last_fresh[key] = t
        g = scene.grasp
        if g is not None and g.mode == "rigid" and g.object_id == binding.object_id:
            self.current_frames[key] = scene.ee_pose
        else:
            self.current_frames.pop(key, None)

    @property
    def enabled(self) -> bool:
        return self.config.enabled_for(self.stage)

    def _extract(self, scene: SceneState, binding: BindingSpec, obs, seed: int, phase: str) -> ExtractionRecord:
        selection = self.selections.get(binding.key)
        if selection is None:
            raise ToolkitError(f"stage {self.stage}: binding {binding.key} has no selected tool")
        tool = self.registry.tool(selection.tool)
        if tool is None:
            raise ToolkitError(f"unknown tool '{selection.tool}'")
        if binding.granularity == "fine" and selection.crop_tool is not None:
            record = extract_fine(
                self.registry, obs, binding.object_id, binding.part, binding.requirement, seed,
                stage=self.stage, tool=tool, noise_scale=self.noise_scale,
                capability_failures=self.capability_failures,
            )
        else:
            record = extract(
                tool, obs, binding.object_id, seed, stage=self.stage, requirement=binding.requirement,
                noise_scale=self.noise_scale, capability_failures=self.capability_failures, part=binding.part,
            )
        if self.audit is not None:
            record = replace(record, extra={**record.extra, "phase": phase})
            self.audit.append(record)
        return record

    def acquire(self, scene: SceneState, bindings: Mapping[str, BindingSpec], label: str = "") -> Acquisition:
        """
        Extract every binding. Attempts are spaced by the tracking period;
        bindings that failed are retried on the next attempt.
        """
        t0 = scene.clock
        pending = dict(sorted(bindings.items()))
        out = Acquisition(values={}, frames={}, clock=t0)
        occluded = set()
        if self.enabled:
            attempts = int(math.floor(self.config.staleness_budget_s / self.config.period_s + 1e-9)) + 1
        else:
            attempts = 1 + self.config.extraction_retries
        elapsed = 0.0
        k = 0
        for k in range(attempts):
            t = t0 + k * self.config.period_s
            obs = observe(scene, self.occlusion, ("acquire", self.stage, label, k), at_time=t)
            for key, binding in list(pending.items()):
                seed = derive_seed(self.seed, "acquire", self.stage, label, key, k)
                record = self._extract(scene, binding, obs, seed, "acquire")
                out.records.append(record)
                elapsed += record.elapsed_s
                if record.succeeded:
                    out.values[key] = record.value
                    self._store(scene, key, binding, record.value, t)
                    self.events.append(TrackingEvent(t, key, "acquired", record.tool))
                    if key in self.current_frames:
                        out.frames[key] = self.current_frames[key]
                    del pending[key]
                else:
                    if record.failure_reason == "occluded":
                        occluded.add(key)
                    self.events.append(TrackingEvent(t, key, "failed", record.failure_reason or ""))
            if not pending:
                break
        out.clock = t0 + k * self.config.period_s + elapsed

        if pending:
            key = next(iter(pending))
            if self.enabled and key in occluded:
                self.events.append(TrackingEvent(out.clock, key, "stale", "never acquired"))
                logger.warning(f"Stage {self.stage}: {key} stayed occluded for the whole staleness budget")
                raise StaleRepresentationError(
                    f"stage {self.stage}: {key} could not be acquired within {self.config.staleness_budget_s} s",
                    binding_key=key,
                    at_time=out.clock,
                )
            logger.warning(f"Stage {self.stage}: extraction of {key} failed after {attempts} attempts")
            raise ExtractionFailure(f"stage {self.stage}: extraction of {key} failed after {attempts} attempts", key)
        logger.debug(f"Stage {self.stage}: acquired {len(out.values)} representations by t={out.clock:.3f}")
        return out

    def follow(self, scene: SceneSource, bindings: Mapping[str, BindingSpec], t_start: float, duration: float) -> int:
        """
        Re-extract every binding at each period tick within ``duration``,
        observing ``scene`` as it is at the tick. Successful values
        replace the held ones.
        Returns the number of re-extractions; raises when a binding has
        gone without a successful extraction for longer than the budget.
        """
        if not self.enabled or duration <= 0:
            return 0
        ticks = int(math.floor(duration / self.config.period_s + 1e-9))
        count = 0
        for k in range(1, ticks + 1):
            t = t_start + k * self.config.period_s
            now = scene(t) if callable(scene) else scene
            obs = observe(now, self.occlusion, ("track", self.stage, t_start, k), at_time=t)
            for key, binding in sorted(bindings.items()):
                seed = derive_seed(self.seed, "track", self.stage, key, t_start, k)
                record = self._extract(now, binding, obs, seed, "track")
                count += 1
                if record.succeeded:
                    self._store(now, key, binding, record.value, t)
                    self.events.append(TrackingEvent(t, key, "refreshed", record.tool))
                    continue
                self.events.append(TrackingEvent(t, key, "failed", record.failure_reason or ""))
                age = t - self._last_fresh.get(key, t_start)
                if age > self.config.staleness_budget_s:
                    self.events.append(TrackingEvent(t, key, "stale", f"age {age:.3f} s"))
                    logger.warning(f"Stage {self.stage}: {key} stale at t={t:.3f} s (age {age:.3f} s)")
                    raise StaleRepresentationError(
                        f"stage {self.stage}: {key} stale at t={t:.3f} s", binding_key=key, at_time=t
                    )
        self.re_extractions += count
        return count
