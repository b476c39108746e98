import logging
from pathlib import Path

import pytest
import yaml
from pytest_param_files import ParamTestData

from orbit_recon.config.main import (
    DatasetConfig,
    PipelineConfig,
    config_from_dict,
    config_hash,
    load_config,
    render_default_config,
)
from orbit_recon.errors import ConfigError
from orbit_recon.warnings_ import ReconWarnings, create_warning, is_suppressed_warning

FIXTURE_PATH = Path(__file__).parent.joinpath("fixtures")


@pytest.mark.param_file(FIXTURE_PATH / "config_errors.yaml", "yaml")
def test_config_errors(file_params: ParamTestData):
    """Errors name the dotted path of the offending field."""
    try:
        config_from_dict(yaml.safe_load(file_params.content))
    except ConfigError as exc:
        result = str(exc)
    else:
        result = "No error"
    file_params.assert_expected(result, rstrip_lines=True)


def test_default_config_is_loadable():
    text = render_default_config()
    assert text.startswith("# orbit-recon pipeline configuration (all defaults)")
    assert "[reference: 500000 at full scale]" in text
    assert config_from_dict(yaml.safe_load(text)) == PipelineConfig()


def test_load_config(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text("dataset:\n  preset: torus\n", encoding="utf8")
    config = load_config(path, seed=3, output_dir=str(tmp_path / "out"))
    assert config.dataset.preset == "torus"
    assert config.dataset.n_frames == DatasetConfig().n_frames
    assert config.seed == 3
    assert config.output_dir == str(tmp_path / "out")
    assert load_config() == PipelineConfig()


def test_load_config_empty_file(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text("", encoding="utf8")
    assert load_config(path) == PipelineConfig()


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read configuration"):
        load_config(tmp_path / "absent.yaml")


def test_load_config_invalid_yaml(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text("dataset: [unclosed\n", encoding="utf8")
    with pytest.raises(ConfigError, match="invalid YAML in"):
        load_config(path)


def test_invalid_override():
    with pytest.raises((TypeError, ValueError), match="seed"):
        load_config(seed="one")


def test_config_hash():
    config = PipelineConfig()
    digest = config_hash(config, ["sfm"])
    assert len(digest) == 64
    assert digest == config_hash(PipelineConfig(), ["sfm"])
    assert digest != config_hash(config.copy(seed=1), ["sfm"])
    assert digest != config_hash(config.copy(sfm=config.sfm.copy(window=5)), ["sfm"])
    # sections a stage does not read leave its hash alone
    assert digest == config_hash(config.copy(mesh=config.mesh.copy(resolution=64)), ["sfm"])


def test_copy_validates():
    config = DatasetConfig()
    assert config.copy(n_frames=10).n_frames == 10
    with pytest.raises(ValueError, match="n_frames"):
        config.copy(n_frames=0)


def test_as_triple():
    names = [name for name, _, _ in DatasetConfig().as_triple()]
    assert names == [f.name for f in DatasetConfig.get_fields()]
    for _, _, field in DatasetConfig().as_triple():
        assert field.metadata["help"]


def test_section_defaults_are_independent():
    a, b = PipelineConfig(), PipelineConfig()
    a.suppress_warnings.append("orbit.cache")
    a.evaluation.overlay_opacities.append(0.25)
    assert b.suppress_warnings == []
    assert b.evaluation.overlay_opacities == [0.0, 0.5, 1.0]


@pytest.mark.parametrize(
    "suppress,expected",
    [
        ([], False),
        (["orbit"], True),
        (["orbit.*"], True),
        (["orbit.empty_mask"], True),
        (["orbit.cache"], False),
        (["other.empty_mask"], False),
    ],
)
def test_is_suppressed_warning(suppress, expected):
    assert is_suppressed_warning("empty_mask", suppress) is expected


def test_create_warning(caplog):
    logger = logging.getLogger("orbit_recon.test")
    with caplog.at_level(logging.WARNING):
        message = create_warning(logger, "frame 3: nothing found", ReconWarnings.EMPTY_MASK)
        suppressed = create_warning(
            logger,
            "frame 4: nothing found",
            ReconWarnings.EMPTY_MASK,
            suppress_warnings=["orbit.empty_mask"],
        )
    assert message == "frame 3: nothing found [orbit.empty_mask]"
    assert suppressed is None
    assert [r.getMessage() for r in caplog.records] == [message]
