"""
Chain of grounding: instruction -> hints -> constraints -> tool selections
-> compiled constraint functions, one StagePlan per stage.

Each phase consumes only the outputs of earlier phases. Phase failures are
raised as GroundingError subclasses tagged with the phase name.
"""
import re
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple, Type

from pydantic import BaseModel, ValidationError

from controllers.cog_models import (
    ConstraintResponse,
    DecomposeResponse,
    EmitResponse,
    EmittedFunction,
    EmittedProgram,
    GroundingBackend,
    Hint,
    NlConstraint,
    NlConstraintModel,
    ObjectRequirement,
    SingleShotResponse,
    StageHints,
    StagePlan,
    SuccessEstimate,
    SuccessEstimateResponse,
    program_from_models,
)
from dsl.evaluator import BindingSpec, make_constraint, validate_bindings
from scene.scene_state import Observation
from toolkit.registry import restrict_registry, select_with_table
from toolkit.toolkit_models import Registry, RepKind, ToolSelection, satisfies
from utils.config import Config
from utils.errors import DslError, GroundingError, PlanningError, SceneError, SchemaValidationError
from utils.logger import get_logger
from utils.serialization import format_validation_error

logger = get_logger(__name__)

BANNED_HINT_TOKENS = re.compile(r"\b(points?|vectors?|poses?|6d|keypoints?)\b", re.IGNORECASE)

SELECTION_MODES = ("adaptive", "fixed_sp", "fixed_vpv")

# Tools available to the fixed-extractor ablations
FIXED_TOOLSETS = {
    "fixed_sp": ("CenterPointExtractor",),
    "fixed_vpv": ("VLMTaskPointExtractor", "VLMTaskVectorExtractor"),
}


def fixed_tool(mode: str, requirement: RepKind) -> str:
    if mode == "fixed_sp":
        return "CenterPointExtractor"
    if RepKind(requirement) == RepKind.VECTOR:
        return "VLMTaskVectorExtractor"
    return "VLMTaskPointExtractor"


@dataclass
class GroundingTrace:
    """Simulated latency and retry counts per phase call."""

    calls: List[Tuple[str, float]] = field(default_factory=list)
    retries: Dict[str, int] = field(default_factory=dict)

    def record(self, phase: str, latency_s: float):
        self.calls.append((phase, float(latency_s)))

    @property
    def elapsed_s(self) -> float:
        return float(sum(t for _, t in self.calls))


def _call_phase(
    backend: GroundingBackend,
    phase: str,
    call: Callable[[], dict],
    model: Type[BaseModel],
    trace: GroundingTrace,
    retries: int = Config.GROUNDING_RETRIES,
):
    last: Optional[ValidationError] = None
    for attempt in range(retries + 1):
        raw = call()
        trace.record(phase, backend.latency(phase))
        try:
            return model.model_validate(raw)
        except ValidationError as e:
            last = e
            trace.retries[phase] = trace.retries.get(phase, 0) + (1 if attempt < retries else 0)
            logger.warning(f"[{phase}] response failed schema validation (attempt {attempt + 1}): {format_validation_error(e)}")
    raise SchemaValidationError(f"response failed schema validation: {format_validation_error(last)}", phase)


# ---------------------------------------------------------------------------
# Checks shared by the phased and single-shot paths
# ---------------------------------------------------------------------------

def check_decomposition(stages: List[StageHints], phase: str = "decompose") -> List[Hint]:
    numbers = [s.stage for s in stages]
    if numbers != list(range(1, len(numbers) + 1)):
        raise SchemaValidationError(f"stage numbering must be contiguous from 1, got {numbers}", phase)
    hints = []
    for s in stages:
        for j, text in enumerate(s.hints):
            m = BANNED_HINT_TOKENS.search(text)
            if m:
                raise SchemaValidationError(
                    f"stage {s.stage} hint {j} names a representation kind ('{m.group(0)}'): {text}", phase
                )
            hints.append(Hint(s.stage, j, text))
    return hints


def check_constraints(
    models: List[NlConstraintModel], hints: List[Hint], obs: Observation, phase: str = "constraints"
) -> Dict[int, List[NlConstraint]]:
    known = {(h.stage, h.index) for h in hints}
    seen = set()
    for m in models:
        if (m.stage, m.hint) not in known:
            raise SchemaValidationError(f"constraint {m.stage}.{m.hint}.{m.index} refers to an unknown hint", phase)
        if (m.stage, m.hint, m.index) in seen:
            raise SchemaValidationError(f"duplicate constraint id {m.stage}.{m.hint}.{m.index}", phase)
        seen.add((m.stage, m.hint, m.index))
        names = [o.name for o in m.objects]
        if len(set(names)) != len(names):
            raise SchemaValidationError(f"constraint {m.stage}.{m.hint}.{m.index} repeats a binding name", phase)
        for o in m.objects:
            if not obs.snapshot.has(o.object):
                raise SchemaValidationError(f"constraint '{m.text}' references unknown object '{o.object}'", phase)
            if o.part is not None:
                try:
                    obs.snapshot.get(o.object).part(o.part)
                except SceneError as e:
                    raise SchemaValidationError(f"constraint '{m.text}': {e.message}", phase) from e
    missing = sorted(known - {(m.stage, m.hint) for m in models})
    if missing:
        s, j = missing[0]
        raise SchemaValidationError(f"stage {s} hint {j} produced no constraints", phase)

    by_stage: Dict[int, List[NlConstraint]] = {}
    for m in sorted(models, key=lambda m: (m.stage, m.hint, m.index)):
        by_stage.setdefault(m.stage, []).append(NlConstraint.from_model(m))
    return by_stage


def stage_requirements(constraints: List[NlConstraint]) -> List[ObjectRequirement]:
    unique: Dict[str, ObjectRequirement] = {}
    for c in constraints:
        for o in c.objects:
            unique.setdefault(o.binding().key, o)
    return [unique[k] for k in sorted(unique)]


# ---------------------------------------------------------------------------
# Phases
# ---------------------------------------------------------------------------

def decompose(
    backend: GroundingBackend, instruction: str, obs: Observation, trace: Optional[GroundingTrace] = None
) -> List[StageHints]:
    trace = trace if trace is not None else GroundingTrace()
    resp = _call_phase(backend, "decompose", lambda: backend.decompose(instruction, obs), DecomposeResponse, trace)
    check_decomposition(resp.stages)
    logger.info(f"Decomposed instruction into {len(resp.stages)} stage(s)")
    return resp.stages


def infer_constraints(
    backend: GroundingBackend,
    instruction: str,
    obs: Observation,
    hints: List[Hint],
    trace: Optional[GroundingTrace] = None,
) -> Dict[int, List[NlConstraint]]:
    trace = trace if trace is not None else GroundingTrace()
    resp = _call_phase(
        backend, "constraints", lambda: backend.infer_constraints(instruction, obs, hints), ConstraintResponse, trace
    )
    return check_constraints(resp.constraints, hints, obs)


def _select(
    reg: Registry,
    stage: int,
    requirements: List[ObjectRequirement],
    estimates: Dict[str, Dict[str, float]],
    obs: Observation,
    mode: str,
) -> Dict[str, ToolSelection]:
    selections = {}
    if mode != "adaptive":
        fixed = restrict_registry(reg, FIXED_TOOLSETS[mode])
        for r in requirements:
            spec = fixed.tool(fixed_tool(mode, r.requirement))
            selections[r.binding().key] = ToolSelection(spec.name, spec.output_kind, None, ())
        return selections
    for r in requirements:
        key = r.binding().key
        if key not in estimates:
            raise SchemaValidationError(f"no success estimate for '{key}'", "select")
        obj = obs.snapshot.get(r.object)
        selections[key] = select_with_table(reg, r.requirement, obj, stage, estimates[key], r.granularity)
    return selections


def select_tools(
    reg: Registry,
    constraints: List[NlConstraint],
    backend: GroundingBackend,
    instruction: str,
    obs: Observation,
    stage: int,
    mode: str = "adaptive",
    trace: Optional[GroundingTrace] = None,
) -> Tuple[Dict[str, ToolSelection], Dict[str, Dict[str, float]]]:
    """Selections and the p_succ tables they were made with, keyed by binding key."""
    if mode not in SELECTION_MODES:
        raise GroundingError(f"unknown selection mode '{mode}'", "select")
    trace = trace if trace is not None else GroundingTrace()
    requirements = stage_requirements(constraints)
    estimates: Dict[str, Dict[str, float]] = {}
    if mode == "adaptive":
        resp = _call_phase(
            backend,
            "estimate",
            lambda: backend.estimate_success(instruction, obs, stage, requirements),
            SuccessEstimateResponse,
            trace,
        )
        estimates = estimates_from(resp.estimates)
    return _select(reg, stage, requirements, estimates, obs, mode), estimates


def _compile(
    plans: Dict[int, StagePlan],
    functions: List[EmittedFunction],
    programs: List[EmittedProgram],
    obs: Observation,
    phase: str = "emit",
):
    emitted = {(f.stage, f.hint, f.index): f for f in functions}
    for plan in plans.values():
        for c in plan.constraints:
            if c.kind == "query":
                continue
            f = emitted.pop((c.stage, c.hint, c.index), None)
            if f is None:
                raise SchemaValidationError(f"no function emitted for constraint {c.cid} '{c.text}'", phase)
            try:
                fn = make_constraint(f.name, c.stage, c.kind, f.expr, c.bindings, source_text=c.text, group=c.group)
            except DslError as e:
                raise GroundingError(f"constraint {c.cid} '{c.text}': {e.message}", phase) from e
            plan.functions.append(fn)
    if emitted:
        extra = sorted(f"{s}.{j}.{k}" for s, j, k in emitted)
        raise SchemaValidationError(f"functions emitted for unknown constraints: {', '.join(extra)}", phase)

    for p in programs:
        plan = plans.get(p.stage)
        if plan is None:
            raise SchemaValidationError(f"program for unknown stage {p.stage}", phase)
        program = program_from_models(p.steps)
        states = {}
        for name, b in plan.program_bindings.items():
            machine = obs.snapshot.get(b.object_id).states
            if RepKind(b.requirement) == RepKind.STATE_MACHINE and machine is not None:
                states[name] = list(machine.states)
        try:
            program.check(set(plan.groups), set(plan.program_bindings), states)
        except PlanningError as e:
            raise GroundingError(f"stage {p.stage} program: {e.message}", phase) from e
        plan.program = program


def emit_constraints(
    backend: GroundingBackend,
    instruction: str,
    obs: Observation,
    plans: Dict[int, StagePlan],
    trace: Optional[GroundingTrace] = None,
) -> Dict[int, StagePlan]:
    """Compile every non-query constraint into a ConstraintFn; attach stage programs."""
    trace = trace if trace is not None else GroundingTrace()
    constraints = [c for p in plans.values() for c in p.constraints]
    selections = {k: v for p in plans.values() for k, v in p.selections.items()}
    resp = _call_phase(
        backend, "emit", lambda: backend.emit(instruction, obs, constraints, selections), EmitResponse, trace
    )
    _compile(plans, resp.functions, resp.programs, obs)
    return plans


def _finish(plans: Dict[int, StagePlan], mode: str) -> List[StagePlan]:
    out = []
    for stage in sorted(plans):
        plan = plans[stage]
        diagnostics = [d for f in plan.functions for d in validate_bindings(f, plan)]
        for name, b in sorted(plan.program_bindings.items()):
            sel = plan.selections.get(b.key)
            if sel is None or not satisfies(sel.output_kind, b.requirement):
                got = "nothing" if sel is None else f"{sel.tool} ({sel.output_kind.value})"
                diagnostics.append(f"program binding '{name}' requires {RepKind(b.requirement).value} but got {got}")
        if diagnostics and mode == "adaptive":
            raise GroundingError(f"stage {stage}: {diagnostics[0]}", "emit")
        for d in diagnostics:
            logger.warning(f"Stage {stage}: {d}")
        plan.diagnostics = diagnostics
        out.append(plan)
    return out


def _new_plan(meta: StageHints, hints: List[Hint], constraints: List[NlConstraint]) -> StagePlan:
    bindings: Dict[str, BindingSpec] = {}
    for c in constraints:
        for b in c.bindings.values():
            bindings[b.key] = b
    return StagePlan(
        stage=meta.stage,
        hints=[h for h in hints if h.stage == meta.stage],
        constraints=constraints,
        bindings=bindings,
        gripper=meta.gripper,
        approach_height=meta.approach_height,
    )


def ground(
    backend: GroundingBackend,
    reg: Registry,
    instruction: str,
    obs: Observation,
    mode: str = "adaptive",
    single_shot: bool = False,
    trace: Optional[GroundingTrace] = None,
) -> List[StagePlan]:
    """
    Run the grounding phases in order and return one StagePlan per stage.
    ``single_shot`` replaces the phases with one combined request.
    """
    if not instruction or not instruction.strip():
        raise GroundingError("instruction must not be empty", "ground")
    if mode not in SELECTION_MODES:
        raise GroundingError(f"unknown selection mode '{mode}'", "ground")
    trace = trace if trace is not None else GroundingTrace()
    if single_shot:
        return _ground_single_shot(backend, reg, instruction, obs, mode, trace)

    stages = decompose(backend, instruction, obs, trace)
    hints = check_decomposition(stages)
    by_stage = infer_constraints(backend, instruction, obs, hints, trace)
    plans: Dict[int, StagePlan] = {}
    for meta in stages:
        plan = _new_plan(meta, hints, by_stage.get(meta.stage, []))
        plan.selections, plan.p_succ = select_tools(
            reg, plan.constraints, backend, instruction, obs, meta.stage, mode, trace
        )
        plans[meta.stage] = plan
    emit_constraints(backend, instruction, obs, plans, trace)
    result = _finish(plans, mode)
    logger.info(
        f"Grounded {len(result)} stage(s), {sum(len(p.functions) for p in result)} constraint function(s) "
        f"in {trace.elapsed_s:.1f} s simulated"
    )
    return result


def _ground_single_shot(
    backend: GroundingBackend,
    reg: Registry,
    instruction: str,
    obs: Observation,
    mode: str,
    trace: GroundingTrace,
) -> List[StagePlan]:
    phase = "single_shot"
    resp = _call_phase(backend, phase, lambda: backend.single_shot(instruction, obs), SingleShotResponse, trace, 0)
    hints = check_decomposition(resp.stages, phase)
    by_stage = check_constraints(resp.constraints, hints, obs, phase)
    estimates = estimates_from(resp.estimates)
    plans: Dict[int, StagePlan] = {}
    for meta in resp.stages:
        plan = _new_plan(meta, hints, by_stage.get(meta.stage, []))
        requirements = stage_requirements(plan.constraints)
        plan.selections = _select(reg, meta.stage, requirements, estimates, obs, mode)
        plan.p_succ = {r.binding().key: estimates.get(r.binding().key, {}) for r in requirements}
        plans[meta.stage] = plan
    _compile(plans, resp.functions, resp.programs, obs, phase)
    return _finish(plans, mode)


def estimates_from(resp: List[SuccessEstimate]) -> Dict[str, Dict[str, float]]:
    return {e.key: dict(e.p_succ) for e in resp}
