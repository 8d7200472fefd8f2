import pytest

from boundprobe.config import RunConfig, interpolate, load_config
from boundprobe.decoder import Mode
from boundprobe.errors import ConfigError


def test_defaults():
    cfg = RunConfig()
    s = cfg.sampler()
    assert (s.lam, s.top_p, s.temperature, s.repetition_penalty) == (80, 0.9, 0.7, 1.15)
    assert cfg.rounds == 3 and cfg.common_fraction == 0.75


def test_yaml_aliases_and_env(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("lambda: 60\nmode: mask\napi_key: ${KEY}\napi_url: ${URL:-http://local}\n")
    cfg = load_config(p, env={"KEY": "secret"})
    assert cfg.lam == 60 and cfg.sampler().mode is Mode.MASK
    assert cfg.api_key == "secret" and cfg.api_url == "http://local"
    assert "api_key" not in cfg.public_dict()


def test_unset_secret_is_none():
    assert load_config(None, env={}).api_key is None
    assert interpolate("${NOPE}", {}) is None
    assert interpolate(["${A}", "b"], {"A": "x"}) == ["x", "b"]


def test_overrides_win(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("seed: 1\n")
    assert load_config(p, env={}, seed=9).seed == 9


@pytest.mark.parametrize("text", ["bogus: 1\n", "top_p: 2\n", "em_mode: f1\n", "- a\n", "mode: beam\n"])
def test_invalid_configs(tmp_path, text):
    p = tmp_path / "c.yaml"
    p.write_text(text)
    with pytest.raises(ConfigError):
        load_config(p, env={})
