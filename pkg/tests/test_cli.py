import orjson
import pytest
import yaml

from harness.cli import build_parser, cli


@pytest.fixture
def overrides(tmp_path, data_dir):
    """One noise-free pick_place trial, written as an overrides file."""
    def _write(**extra):
        body = {
            "tasks": [{
                "name": "pick_place",
                "scene": str(data_dir / "scenes" / "pick_place.json"),
                "script": str(data_dir / "tasks" / "pick_place.yaml"),
            }],
            "workers": 1,
        }
        body.update(extra)
        path = tmp_path / "overrides.yaml"
        path.write_text(yaml.safe_dump(body), encoding="utf-8")
        return str(path)
    return _write


def test_no_command_prints_help(capsys):
    assert cli([]) == 2
    assert "usage" in capsys.readouterr().out


def test_unknown_mode_is_rejected():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["run", "--mode", "sometimes"])


def test_validate_shipped_files(capsys):
    assert cli(["validate"]) == 0
    out = capsys.readouterr().out
    assert "pick_place: 2 objects, 2 stage(s)" in out
    assert "registry" in out


def test_missing_config_is_a_config_error(tmp_path, capsys):
    assert cli(["validate", "--config", str(tmp_path / "absent.yaml")]) == 1
    assert "cannot read" in capsys.readouterr().err


def test_report_of_missing_path(tmp_path):
    assert cli(["report", str(tmp_path / "nothing")]) == 1


def test_unknown_task(overrides):
    assert cli(["ground", "--overrides", overrides(), "--task", "juggle"]) == 1


def test_run_writes_report(overrides, tmp_path, capsys):
    out_dir = tmp_path / "out"
    code = cli(["run", "--overrides", overrides(), "--trials", "1", "--noise", "none", "--out", str(out_dir), "--no-progress"])
    assert code == 0
    report = orjson.loads((out_dir / "report.json").read_bytes())
    assert report["total"]["trials"] == 1
    assert report["noise"] == "none"
    assert capsys.readouterr().out.startswith("Task")

    assert cli(["report", str(out_dir)]) == 0
    assert "Total" in capsys.readouterr().out


def test_ground_prints_plans(overrides, capsys):
    assert cli(["ground", "--overrides", overrides(), "--task", "pick_place"]) == 0
    plans = orjson.loads(capsys.readouterr().out)
    assert [p["stage"] for p in plans] == [1, 2]


def test_trial_exports(overrides, tmp_path, capsys):
    export = tmp_path / "tau.jsonl"
    audit = tmp_path / "audit.jsonl"
    code = cli(["trial", "--overrides", overrides(noise="none"), "--task", "pick_place",
                "--export", str(export), "--audit", str(audit)])
    assert code == 0
    assert export.exists()
    assert (tmp_path / "tau.iterations.jsonl").exists()
    first = orjson.loads(audit.read_bytes().splitlines()[0])
    assert first["tool"] == "CenterPointExtractor"
    assert "CenterPointExtractor -> red_block" in capsys.readouterr().out
