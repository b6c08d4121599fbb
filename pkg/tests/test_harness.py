import pytest

from db.result_store import export_iteration_log, export_trajectories, load_report, save_report
from harness.benchmark import aggregate, benchmark_load, run_benchmark, validate_inputs
from harness.harness_models import AblationMode, BenchmarkConfig, ErrorCategory, TrialResult, resolve_noise
from harness.report import render_table, report_bytes
from harness.trial import classify_failure, execute_trial, run_trial
from utils.errors import (
    ConfigError,
    ExtractionFailure,
    GeometryError,
    PlacementError,
    PlanningError,
    SceneError,
    SchemaValidationError,
    StaleRepresentationError,
    UnsatisfiableRequirementError,
)


@pytest.fixture
def bench_config(data_dir, task_entry):
    def _config(*names, **kwargs):
        kwargs.setdefault("trials", 2)
        kwargs.setdefault("noise", "none")
        kwargs.setdefault("workers", 1)
        return BenchmarkConfig(tasks=[task_entry(n) for n in names], registry=data_dir / "registry.json", **kwargs)
    return _config


def _result(task, seed, success, category=None, time=10.0, repeat=0):
    return TrialResult(task=task, seed=seed, success=success, sim_time_s=time, failure_category=category, repeat=repeat)


class TestClassifyFailure:
    @pytest.mark.parametrize("error, category", [
        (SchemaValidationError("bad", phase="emit"), ErrorCategory.PLANNING),
        (UnsatisfiableRequirementError("vector", ["point"]), ErrorCategory.TOOLKIT_EXTRACTION),
        (ExtractionFailure("lost"), ErrorCategory.TOOLKIT_EXTRACTION),
        (StaleRepresentationError("old", binding_key="a:point:coarse", at_time=2.0), ErrorCategory.REPRESENTATION_TRACKING),
        (PlanningError("stuck"), ErrorCategory.ACTION_GENERATION),
        (SceneError("off the table"), ErrorCategory.ACTION_GENERATION),
        (GeometryError("nan"), ErrorCategory.ACTION_GENERATION),
        (PlacementError("crowded"), ErrorCategory.OTHER),
        (RuntimeError("boom"), ErrorCategory.OTHER),
    ])
    def test_error_categories(self, error, category):
        assert classify_failure(error) == category

    def test_module_tags_and_unknowns(self):
        assert classify_failure("tracking") == ErrorCategory.REPRESENTATION_TRACKING
        assert classify_failure("mystery") == ErrorCategory.OTHER
        assert classify_failure(None) == ErrorCategory.OTHER


class TestTrial:
    def test_noise_free_pick_place_succeeds(self, trial_config):
        outcome = execute_trial(trial_config("pick_place"))
        result = outcome.result
        assert result.success, result.failure_message
        assert result.failure_category is None
        assert [s["stage"] for s in result.stages] == [1, 2]
        assert result.grounding_time_s == pytest.approx(10.0)
        assert result.extraction_time_s == pytest.approx(outcome.audit.total_elapsed())
        assert result.sim_time_s > 0

    def test_trials_are_reproducible(self, trial_config):
        cfg = trial_config("pick_place", seed=7, noise="default")
        assert run_trial(cfg) == run_trial(cfg)

    def test_fixed_single_point_cannot_ground_plush(self, trial_config):
        result = run_trial(trial_config("plush_upright", mode=AblationMode.FIXED_SP))
        assert not result.success
        assert result.failure_category == ErrorCategory.TOOLKIT_EXTRACTION
        assert result.failure_stage == 2
        assert "requires pose" in result.failure_message

    def test_corrupted_single_shot_is_a_planning_failure(self, trial_config):
        result = run_trial(trial_config("pick_place", mode=AblationMode.NO_COG, no_cog_schema_error_prob=1.0))
        assert result.failure_category == ErrorCategory.PLANNING
        assert result.failure_stage is None
        assert result.sim_time_s == 0.0

    def test_missing_scene_is_a_config_error(self, trial_config, tmp_path):
        cfg = trial_config("pick_place")
        cfg = cfg.model_copy(update={"task": cfg.task.model_copy(update={"scene": tmp_path / "missing.json"})})
        with pytest.raises(ConfigError):
            run_trial(cfg)


class TestModels:
    def test_category_required_exactly_on_failure(self):
        with pytest.raises(ValueError):
            _result("t", 0, False)
        with pytest.raises(ValueError):
            _result("t", 0, True, ErrorCategory.OTHER)

    def test_ablation_mode_flags(self):
        assert AblationMode.NO_COG_FIXED_VPV.single_shot
        assert AblationMode.NO_COG_FIXED_VPV.selection == "fixed_vpv"
        assert not AblationMode.FIXED_SP.single_shot
        assert AblationMode.FULL.selection == "adaptive"

    def test_noise_profiles(self):
        assert resolve_noise("none").noise_scale == 0.0
        with pytest.raises(ValueError, match="unknown noise profile"):
            resolve_noise("storm")

    def test_seeds_per_repeat(self, bench_config):
        cfg = bench_config("pick_place", trials=3, base_seed=10)
        assert cfg.seeds(0) == [10, 11, 12]
        assert cfg.seeds(1) == [13, 14, 15]


class TestAggregate:
    def test_histogram_and_totals(self, bench_config):
        cfg = bench_config("pick_place", "drawer")
        results = [
            _result("pick_place", 0, True, time=10.0),
            _result("pick_place", 1, False, ErrorCategory.ACTION_GENERATION, time=20.0),
            _result("drawer", 0, False, ErrorCategory.REPRESENTATION_TRACKING),
            _result("drawer", 1, False, ErrorCategory.REPRESENTATION_TRACKING),
        ]
        report = aggregate(cfg, results)
        assert report.failures == 3
        assert sum(report.error_histogram.values()) == report.failures
        assert report.error_histogram[ErrorCategory.REPRESENTATION_TRACKING] == 2
        pick = report.tasks[0]
        assert (pick.trials, pick.successes, pick.success_rate) == (2, 1, 0.5)
        assert pick.mean_time_s == pytest.approx(15.0)
        assert report.total.success_rate == pytest.approx(0.25)
        assert "workers" not in report.config

    def test_repeat_spread(self, bench_config):
        cfg = bench_config("pick_place", trials=2, repeats=2)
        results = [
            _result("pick_place", 0, True),
            _result("pick_place", 1, True),
            _result("pick_place", 2, True, repeat=1),
            _result("pick_place", 3, False, ErrorCategory.OTHER, repeat=1),
        ]
        report = aggregate(cfg, results)
        assert report.tasks[0].success_std == pytest.approx(0.25)
        assert report.seeds == [0, 1, 2, 3]
        assert "±" in render_table(report)

    def test_table_layout(self, bench_config):
        cfg = bench_config("pick_place")
        report = aggregate(cfg, [_result("pick_place", 0, True), _result("pick_place", 1, False, ErrorCategory.PLANNING)])
        table = render_table(report)
        lines = table.splitlines()
        assert [c.strip() for c in lines[0].split(" | ")] == ["Task", "Success", "Time(s)"]
        assert any(line.startswith("Total") for line in lines)
        assert "planning: 1 (100.0%)" in table
        assert "not included in Time" in table


class TestBenchmark:
    def test_benchmark_is_deterministic_across_worker_counts(self, bench_config):
        one = run_benchmark(bench_config("pick_place", "drawer", workers=1), progress=False)
        three = run_benchmark(bench_config("pick_place", "drawer", workers=3), progress=False)
        assert report_bytes(one) == report_bytes(three)
        assert one.total.trials == 4
        assert [r.task for r in one.results] == ["pick_place", "pick_place", "drawer", "drawer"]

    def test_report_round_trips_through_disk(self, bench_config, tmp_path):
        report = aggregate(bench_config("pick_place"), [_result("pick_place", 0, True), _result("pick_place", 1, True)])
        path = save_report(report, tmp_path / "out")
        assert (tmp_path / "out" / "report.txt").read_text(encoding="utf-8").startswith("Task")
        assert report_bytes(load_report(path.parent)) == report_bytes(report)

    def test_load_report_rejects_garbage(self, tmp_path):
        bad = tmp_path / "report.json"
        bad.write_text('{"mode": "full"}', encoding="utf-8")
        with pytest.raises(ConfigError, match="invalid report"):
            load_report(bad)

    def test_trajectory_exports(self, trial_config, tmp_path):
        outcome = execute_trial(trial_config("pick_place"))
        trajectories = outcome.execution.trajectories
        count = export_trajectories(trajectories, tmp_path / "tau.jsonl")
        assert count == sum(len(t.waypoints) for t in trajectories)
        assert len((tmp_path / "tau.jsonl").read_bytes().splitlines()) == count
        logged = export_iteration_log(trajectories, tmp_path / "iters.jsonl")
        assert logged == sum(len(t.iteration_log) for t in trajectories)


class TestBenchmarkFile:
    def test_shipped_config_loads_and_validates(self, data_dir):
        cfg = benchmark_load(data_dir / "benchmark.yaml")
        assert [t.name for t in cfg.tasks] == ["pick_place", "plush_upright", "tool_insert", "drawer", "stack"]
        assert cfg.registry == data_dir.resolve() / "registry.json"
        assert len(validate_inputs(cfg)) == 5

    def test_overrides_win(self, data_dir):
        cfg = benchmark_load(data_dir / "benchmark.yaml", {"trials": 3, "mode": "no_cog"})
        assert cfg.trials == 3
        assert cfg.mode == AblationMode.NO_COG

    def test_invalid_values(self, data_dir):
        with pytest.raises(ConfigError, match="invalid benchmark config"):
            benchmark_load(data_dir / "benchmark.yaml", {"noise": "storm"})
        with pytest.raises(ConfigError, match="cannot read"):
            benchmark_load(data_dir / "nope.yaml")


@pytest.mark.slow
@pytest.mark.parametrize("task", ["pick_place", "plush_upright", "drawer", "stack"])
def test_noise_free_suite_always_succeeds(bench_config, task):
    report = run_benchmark(bench_config(task, trials=10, workers=4), progress=False)
    failures = [(r.seed, r.failure_category, r.failure_message) for r in report.results if not r.success]
    assert failures == []
