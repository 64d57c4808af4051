import pytest

from config import RunConfig, load_config
from errors import ContractViolationError, InputNotFoundError


def _config_file(tmp_path, text):
    path = tmp_path / "run.env"
    path.write_text(text)
    return path


def test_defaults():
    config = load_config(environ={})
    assert config == RunConfig()
    th = config.thresholds()
    assert (th.sc_th, th.min_v_th, th.max_v_th, th.scale_jump) == (2.5, 25.0, 50.0, 1.5)


def test_precedence_flag_file_env_default(tmp_path):
    path = _config_file(tmp_path, "SC_TH=2.0\nMIN_V_TH=20\n")
    environ = {"PSFORGE_SC_TH": "1.8", "PSFORGE_MIN_V_TH": "15", "PSFORGE_SCALE_JUMP": "1.7"}
    config = load_config(path, overrides={"sc_th": 3.0, "min_v_th": None}, environ=environ)
    assert config.sc_th == 3.0
    assert config.min_v_th == 20.0
    assert config.scale_jump == 1.7
    assert config.margin == 1.0


def test_config_file_keys_are_case_insensitive(tmp_path):
    path = _config_file(tmp_path, "planar_scene=true\nSeed=4\n")
    config = load_config(path, environ={})
    assert config.planar_scene and config.seed == 4


def test_planar_scene_raises_max_threshold():
    assert RunConfig(planar_scene=True).thresholds().max_v_th == 75.0
    assert RunConfig(planar_scene=True, max_v_th=60.0).thresholds().max_v_th == 60.0


def test_hash_ignores_threads_and_paths():
    base = RunConfig(scene_name="fountain")
    assert base.config_hash() == RunConfig(scene_name="fountain", threads=8, out_dir="elsewhere").config_hash()
    assert base.config_hash() != RunConfig(scene_name="fountain", sc_th=2.0).config_hash()
    assert len(base.config_hash()) == 64


def test_hash_uses_resolved_thresholds():
    assert RunConfig(max_v_th=50.0).config_hash() == RunConfig().config_hash()


def test_scene_name_defaults_to_scene_dir(tmp_path):
    assert RunConfig(scene_dir=str(tmp_path / "castle")).resolved_scene_name == "castle"
    assert RunConfig(scene_dir=str(tmp_path), scene_name="x").resolved_scene_name == "x"


@pytest.mark.parametrize("text", ["SC_TH=abc\n", "PLANAR_SCENE=maybe\n", "THREADS=0\n", "MIN_V_TH=80\n"])
def test_invalid_values(tmp_path, text):
    with pytest.raises(ContractViolationError):
        load_config(_config_file(tmp_path, text), environ={})


def test_invalid_environment_value():
    with pytest.raises(ContractViolationError):
        load_config(environ={"PSFORGE_SEED": "one"})


def test_missing_config_file(tmp_path):
    with pytest.raises(InputNotFoundError):
        load_config(tmp_path / "absent.env", environ={})


def test_unknown_keys_are_ignored(tmp_path, caplog):
    config = load_config(_config_file(tmp_path, "COLOR=blue\nMARGIN=0.5\n"), environ={})
    assert config.margin == 0.5
    assert "COLOR" in caplog.text
