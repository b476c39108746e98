import json

import pytest
import yaml

from orbit_recon.cli import EXIT_CONFIG, EXIT_OK, EXIT_STAGE, main
from orbit_recon.config.main import PipelineConfig, config_from_dict


def test_config_command(capsys):
    assert main(["config"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("# orbit-recon pipeline configuration")
    assert config_from_dict(yaml.safe_load(out)) == PipelineConfig()


def test_bad_config_exits_2(tmp_path, capsys):
    path = tmp_path / "config.yaml"
    path.write_text("dataset:\n  n_frames: 1\n", encoding="utf8")
    assert main(["run", "-c", str(path), "-o", str(tmp_path / "out")]) == EXIT_CONFIG
    assert "configuration error: dataset.n_frames: must be >= 2 (got 1)" in capsys.readouterr().err


def test_missing_dependency_exits_3(tmp_path, capsys):
    assert main(["stage", "sfm", "-o", str(tmp_path / "out")]) == EXIT_STAGE
    err = capsys.readouterr().err
    assert "stage 'sfm' needs the outputs of 'extract'" in err


def test_report_without_run_exits_3(tmp_path, capsys):
    assert main(["report", "-o", str(tmp_path / "out")]) == EXIT_STAGE
    assert "no evaluation report" in capsys.readouterr().err


def test_report_prints_evaluation(tmp_path, capsys):
    path = tmp_path / "out" / "evaluate" / "eval_report.json"
    path.parent.mkdir(parents=True)
    path.write_text(json.dumps({"chamfer": {"mean": 0.01}}), encoding="utf8")
    assert main(["report", "-o", str(tmp_path / "out"), "-f", "json"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out) == {"evaluation": {"chamfer": {"mean": 0.01}}}


def test_unknown_stage_is_a_usage_error(capsys):
    with pytest.raises(SystemExit) as info:
        main(["stage", "colmap"])
    assert info.value.code == 2


def test_generate_and_stage(tmp_path, capsys):
    path = tmp_path / "config.yaml"
    path.write_text(
        "dataset:\n  preset: sphere\n  n_frames: 4\n  width: 32\n  height: 24\n", encoding="utf8"
    )
    out = tmp_path / "out"
    assert main(["generate", "-c", str(path), "-o", str(out)]) == EXIT_OK
    assert (out / "generate" / "frames" / "000003.png").exists()
    assert main(["stage", "generate", "-c", str(path), "-o", str(out)]) == EXIT_OK
    assert main(["stage", "generate", "-c", str(path), "-o", str(out)]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[-2:] == ["generate: ran", "generate: cached"]
