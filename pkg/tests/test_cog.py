import pytest

from controllers.cog import GroundingTrace, check_decomposition, ground
from controllers.cog_models import StageHints
from controllers.oracle_backend import OracleBackend
from geometry.se3 import GripperCommand
from scene.scene_sim import observe
from utils.errors import GroundingError, SchemaValidationError


@pytest.fixture
def grounded(load_scene, load_task, registry):
    def _ground(name, mode="adaptive", single_shot=False, schema_error_prob=0.0, seed=0, backend=None):
        script = load_task(name)
        backend = backend or OracleBackend(script, registry, seed=seed, schema_error_prob=schema_error_prob)
        trace = GroundingTrace()
        plans = ground(backend, registry, script.instruction, observe(load_scene(name)), mode=mode,
                       single_shot=single_shot, trace=trace)
        return plans, trace
    return _ground


def _stage(stage, *hints):
    return StageHints(stage=stage, hints=list(hints), gripper=GripperCommand.HOLD, approach_height=0.0)


class TestPhased:
    def test_pick_place_plans(self, grounded):
        plans, trace = grounded("pick_place")
        assert [p.stage for p in plans] == [1, 2]
        first = plans[0]
        assert first.gripper == GripperCommand.CLOSE
        assert first.approach_height == pytest.approx(0.1)
        assert first.selections["red_block:point:coarse"].tool == "CenterPointExtractor"
        assert len(first.functions) == 1
        assert first.diagnostics == []
        assert plans[1].objects == ["green_block", "red_block"]
        # decompose, constraints, one estimate per stage, emit
        assert [phase for phase, _ in trace.calls] == ["decompose", "constraints", "estimate", "estimate", "emit"]
        assert trace.elapsed_s == pytest.approx(10.0)

    def test_selection_tables_are_kept(self, grounded):
        plans, _ = grounded("pick_place")
        sel = plans[0].selections["red_block:point:coarse"]
        utilities = [r.utility for r in sel.utilities]
        assert utilities == sorted(utilities, reverse=True)
        assert plans[0].p_succ["red_block:point:coarse"]["CenterPointExtractor"] == pytest.approx(0.97)

    def test_fine_part_binding_selects_region_tool(self, grounded):
        plans, _ = grounded("tool_insert")
        sel = plans[1].selections["pen/body:vector:fine"]
        assert sel.tool == "VLMTaskVectorExtractor"
        assert sel.crop_tool == "LocalSubImageExtractor"

    def test_drawer_program_and_query_bindings(self, grounded):
        plans, _ = grounded("drawer")
        first = plans[0]
        assert first.program is not None
        assert set(first.program_bindings) == {"drawer_state"}
        assert first.selections["cabinet:state_machine:coarse"].tool == "VLMTaskStateMachineExtractor"
        assert first.groups == ["grasp", "pull"]
        assert plans[1].program is None

    def test_stack_foreach_expands_per_block(self, grounded):
        plans, _ = grounded("stack")
        groups = plans[0].groups
        assert {"grasp:block_a", "grasp:block_b", "grasp:block_c", "place"} <= set(groups)
        assert plans[0].selections["block_c:topo_order:coarse"].tool == "VLMTaskTopoSorter"

    def test_plans_serialize(self, grounded):
        plans, _ = grounded("plush_upright")
        d = plans[1].to_dict()
        assert d["stage"] == 2
        assert len(d["functions"]) == 2
        assert d["gripper"] == "open"

    def test_empty_instruction(self, registry, load_task, load_scene):
        backend = OracleBackend(load_task("pick_place"), registry)
        with pytest.raises(GroundingError, match="instruction"):
            ground(backend, registry, "  ", observe(load_scene("pick_place")))

    def test_unknown_mode(self, registry, load_task, load_scene):
        script = load_task("pick_place")
        with pytest.raises(GroundingError):
            ground(OracleBackend(script, registry), registry, script.instruction, observe(load_scene("pick_place")), mode="random")


class TestFixedModes:
    def test_fixed_sp_keeps_going_with_diagnostics(self, grounded):
        plans, _ = grounded("plush_upright", mode="fixed_sp")
        assert all(s.tool == "CenterPointExtractor" for p in plans for s in p.selections.values())
        assert plans[0].diagnostics == []
        assert plans[1].diagnostics
        assert "requires pose" in plans[1].diagnostics[0]

    def test_fixed_vpv_uses_vector_tool_for_vectors(self, grounded):
        plans, trace = grounded("tool_insert", mode="fixed_vpv")
        assert plans[1].selections["pen/body:vector:fine"].tool == "VLMTaskVectorExtractor"
        assert plans[0].selections["pen:point:coarse"].tool == "VLMTaskPointExtractor"
        assert "estimate" not in [phase for phase, _ in trace.calls]


class TestSingleShot:
    def test_clean_single_shot_matches_phased(self, grounded):
        phased, _ = grounded("drawer")
        single, trace = grounded("drawer", single_shot=True)
        assert [p.to_dict() for p in single] == [p.to_dict() for p in phased]
        assert trace.calls == [("single_shot", 6.0)]

    def test_corrupted_response_fails_without_retry(self, grounded):
        with pytest.raises(SchemaValidationError) as exc:
            grounded("pick_place", single_shot=True, schema_error_prob=1.0)
        assert exc.value.phase == "single_shot"
        assert exc.value.module == "grounding"

    def test_corruption_rate_tracks_probability(self, load_task, load_scene, registry):
        script = load_task("pick_place")
        obs = observe(load_scene("pick_place"))
        corrupted = 0
        for seed in range(400):
            response = OracleBackend(script, registry, seed=seed, schema_error_prob=0.2).single_shot(script.instruction, obs)
            clean = OracleBackend(script, registry, seed=seed, schema_error_prob=0.0).single_shot(script.instruction, obs)
            corrupted += response != clean
        assert 0.13 < corrupted / 400 < 0.27


class _FlakyBackend(OracleBackend):
    """Returns one malformed decomposition before answering properly."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.calls = 0

    def decompose(self, instruction, obs):
        self.calls += 1
        if self.calls == 1:
            return {"stages": [{"stage": 1}]}
        return super().decompose(instruction, obs)


class _BadObjectBackend(OracleBackend):
    def infer_constraints(self, instruction, obs, hints):
        out = super().infer_constraints(instruction, obs, hints)
        out["constraints"][0]["objects"][0]["object"] = "blue_block"
        return out


class TestValidation:
    def test_schema_retry_recovers(self, grounded, load_task, registry):
        backend = _FlakyBackend(load_task("pick_place"), registry)
        plans, trace = grounded("pick_place", backend=backend)
        assert len(plans) == 2
        assert trace.retries == {"decompose": 1}

    def test_unknown_object_rejected(self, grounded, load_task, registry):
        with pytest.raises(SchemaValidationError, match="blue_block") as exc:
            grounded("pick_place", backend=_BadObjectBackend(load_task("pick_place"), registry))
        assert exc.value.phase == "constraints"

    @pytest.mark.parametrize("hint", [
        "Move to the grasp point of the cup.",
        "Align the two vectors.",
        "Estimate the 6D pose first.",
        "Find keypoints on the handle.",
    ])
    def test_hints_must_not_name_representations(self, hint):
        with pytest.raises(SchemaValidationError, match="representation kind"):
            check_decomposition([_stage(1, hint)])

    def test_plain_language_hint_passes(self):
        hints = check_decomposition([_stage(1, "Grasp the pointer by its handle."), _stage(2, "Lift it.")])
        assert [(h.stage, h.index) for h in hints] == [(1, 0), (2, 0)]

    def test_stage_numbers_must_be_contiguous(self):
        with pytest.raises(SchemaValidationError, match="contiguous"):
            check_decomposition([_stage(1, "Grasp it."), _stage(3, "Lift it.")])
