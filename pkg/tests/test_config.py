import pytest
import yaml

from app.config import RunConfig, load_config
from app.errors import ConfigError, CutoffCapError


def _write(tmp_path, data) -> str:
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return path


def test_defaults_are_the_reference_set():
    config = load_config()
    assert (config.omega_a, config.temperature, config.g, config.delta, config.n_rounds) == (1.4e9, 0.1, 0.04, 0.01, 16)
    assert config.thermal_spec().x == pytest.approx(0.106935, rel=1e-4)
    assert config.ppo.clip_ratio == 0.2


def test_yaml_and_overrides(tmp_path):
    path = _write(tmp_path, {"g": 0.05, "n_rounds": 8, "ppo": {"learning_rate": 1e-3}})
    config = load_config(path, n_rounds=4, seed=None)
    assert config.g == 0.05
    assert config.n_rounds == 4
    assert config.seed == 0
    assert config.ppo.learning_rate == 1e-3
    assert config.ppo.clip_ratio == 0.2


def test_nested_override_merges(tmp_path):
    path = _write(tmp_path, {"ppo": {"learning_rate": 1e-3}})
    config = load_config(path, ppo={"max_iterations": 7})
    assert config.ppo.learning_rate == 1e-3
    assert config.ppo.max_iterations == 7


def test_environment_variables(monkeypatch):
    monkeypatch.setenv("COOLOPT_G", "0.02")
    monkeypatch.setenv("COOLOPT_PPO__MAX_ITERATIONS", "11")
    config = load_config()
    assert config.g == 0.02
    assert config.ppo.max_iterations == 11


def test_unknown_keys_are_rejected(tmp_path):
    with pytest.raises(ConfigError, match="temprature"):
        load_config(_write(tmp_path, {"temprature": 0.2}))
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, {"ppo": {"learnin_rate": 0.1}}))


def test_temperature_and_x_are_exclusive(tmp_path):
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, {"temperature": 0.1, "x": 0.2}))


def test_x_alone_replaces_temperature():
    config = load_config(x=0.2)
    assert config.temperature is None
    assert config.thermal_spec().x == 0.2
    assert RunConfig(**config.resolved()).x == 0.2


def test_unreadable_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("g: [unterminated", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(bad)
    listing = tmp_path / "list.yaml"
    listing.write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(listing)


def test_empty_temperature_list_is_rejected():
    with pytest.raises(ConfigError):
        load_config(temperatures=[])


def test_cutoff_errors_name_the_key_that_applies():
    config = load_config(temperature=10.0, scan_cutoff_cap=100)
    with pytest.raises(CutoffCapError, match="'cutoff_cap'"):
        config.initial_state()
    with pytest.raises(CutoffCapError, match="scan_cutoff_cap"):
        config.initial_state(scan=True)


def test_env_config_follows_ppo_section():
    config = load_config(n_rounds=5, ppo={"obs_size": 32, "reward_mode": "final"})
    env = config.env_config(config.initial_state())
    assert (env.n_rounds, env.obs_size, env.reward_mode) == (5, 32, "final")
