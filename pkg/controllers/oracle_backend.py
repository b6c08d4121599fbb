"""
Deterministic grounding backend that replays a task script.
"""
from typing import Any, Dict, List

from controllers.cog_models import Hint, NlConstraint, NlConstraintModel, ObjectRequirement
from controllers.task_script import TaskScript
from scene.scene_state import Observation
from toolkit.registry import derive_p_succ
from toolkit.toolkit_models import Registry, ToolSelection
from utils.config import Config
from utils.logger import get_logger
from utils.seeding import rng_for

logger = get_logger(__name__)


class OracleBackend:
    """
    Answers every grounding phase from a TaskScript. Success estimates are
    the script's table, or capability-derived when the script says "derive".

    ``schema_error_prob`` models single-shot grounding: with that
    probability the combined response loses one required field.
    """

    def __init__(
        self,
        script: TaskScript,
        registry: Registry,
        seed: int = 0,
        schema_error_prob: float = Config.NO_COG_SCHEMA_ERROR_PROB,
        phase_latency_s: float = Config.GROUNDING_PHASE_LATENCY_S,
        single_shot_latency_s: float = Config.GROUNDING_SINGLE_SHOT_LATENCY_S,
    ):
        self.script = script
        self.registry = registry
        self.seed = seed
        self.schema_error_prob = schema_error_prob
        self.phase_latency_s = phase_latency_s
        self.single_shot_latency_s = single_shot_latency_s

    def latency(self, phase: str) -> float:
        return self.single_shot_latency_s if phase == "single_shot" else self.phase_latency_s

    # -- phases ---------------------------------------------------------

    def decompose(self, instruction: str, obs: Observation) -> Dict[str, Any]:
        return {
            "stages": [
                {
                    "stage": s.stage,
                    "hints": [h.text for h in s.hints],
                    "gripper": s.gripper.value,
                    "approach_height": s.approach_height,
                }
                for s in self.script.stages
            ]
        }

    def infer_constraints(self, instruction: str, obs: Observation, hints: List[Hint]) -> Dict[str, Any]:
        out = []
        for h in hints:
            template = self._hint_template(h)
            if template is None:
                continue
            expanded = [c for t in template.constraints for c in t.expand()]
            for k, c in enumerate(expanded):
                out.append({
                    "stage": h.stage,
                    "hint": h.index,
                    "index": k,
                    "text": c.text,
                    "kind": c.kind,
                    "group": c.group,
                    "objects": [o.model_dump(mode="json") for o in c.objects],
                })
        return {"constraints": out}

    def estimate_success(
        self, instruction: str, obs: Observation, stage: int, requirements: List[ObjectRequirement]
    ) -> Dict[str, Any]:
        estimates = []
        for r in requirements:
            key = r.binding().key
            if self.script.p_succ == "derive":
                obj = obs.snapshot.get(r.object)
                table = derive_p_succ(self.registry, obj.object_class, r.requirement)
            else:
                table = {t.name: float(self.script.p_succ.get(t.name, 0.0)) for t in self.registry.tools}
            estimates.append({"key": key, "p_succ": table})
        return {"estimates": estimates}

    def emit(
        self,
        instruction: str,
        obs: Observation,
        constraints: List[NlConstraint],
        selections: Dict[str, ToolSelection],
    ) -> Dict[str, Any]:
        functions = []
        for c in constraints:
            if c.kind == "query":
                continue
            template = self._constraint_template(c)
            functions.append({
                "stage": c.stage,
                "hint": c.hint,
                "index": c.index,
                "name": f"{c.group}@{c.cid}",
                "expr": template.expr,
            })
        stages = sorted({c.stage for c in constraints})
        programs = [
            {"stage": s.stage, "steps": [step.model_dump(mode="json") for step in s.program]}
            for s in self.script.stages
            if s.program and s.stage in stages
        ]
        return {"functions": functions, "programs": programs}

    def single_shot(self, instruction: str, obs: Observation) -> Dict[str, Any]:
        stages = self.decompose(instruction, obs)["stages"]
        hints = [Hint(s["stage"], j, text) for s in stages for j, text in enumerate(s["hints"])]
        constraints = self.infer_constraints(instruction, obs, hints)["constraints"]
        parsed = [NlConstraint.from_model(NlConstraintModel.model_validate(c)) for c in constraints]
        estimates = []
        for stage in sorted({c.stage for c in parsed}):
            reqs = _unique_requirements([o for c in parsed if c.stage == stage for o in c.objects])
            estimates.extend(self.estimate_success(instruction, obs, stage, reqs)["estimates"])
        emitted = self.emit(instruction, obs, parsed, {})
        response = {
            "stages": stages,
            "constraints": constraints,
            "estimates": estimates,
            "functions": emitted["functions"],
            "programs": emitted["programs"],
        }
        return self._maybe_corrupt(response)

    # -- helpers --------------------------------------------------------

    def _maybe_corrupt(self, response: Dict[str, Any]) -> Dict[str, Any]:
        rng = rng_for(self.seed, "single_shot", self.script.name)
        if rng.random() >= self.schema_error_prob:
            return response
        candidates = [(key, None) for key in sorted(response)]
        for key in ("stages", "constraints", "functions"):
            for i, item in enumerate(response[key]):
                for field_name in sorted(item):
                    candidates.append((key, (i, field_name)))
        key, where = candidates[int(rng.integers(len(candidates)))]
        if where is None:
            del response[key]
        else:
            del response[key][where[0]][where[1]]
        logger.debug(f"Single-shot response for '{self.script.name}' lost field {key}{'' if where is None else where}")
        return response

    def _hint_template(self, h: Hint):
        for s in self.script.stages:
            if s.stage == h.stage and 0 <= h.index < len(s.hints):
                return s.hints[h.index]
        return None

    def _constraint_template(self, c: NlConstraint):
        template = self._hint_template(Hint(c.stage, c.hint, ""))
        return [x for t in template.constraints for x in t.expand()][c.index]


def _unique_requirements(objects: List[ObjectRequirement]) -> List[ObjectRequirement]:
    seen: Dict[str, ObjectRequirement] = {}
    for o in objects:
        seen.setdefault(o.binding().key, o)
    return [seen[k] for k in sorted(seen)]
