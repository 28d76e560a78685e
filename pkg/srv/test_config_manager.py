"""
配置管理的测试
"""

import json

import pytest

from .config_manager import ConfigManager, tomllib
from .errors import ConfigError


def _manager(tmp_path, config=None, user=None, suffix=".json"):
    config_file = tmp_path / f"bench_config{suffix}"
    user_file = tmp_path / "user_config.json"
    if config is not None:
        config_file.write_text(config if isinstance(config, str) else json.dumps(config),
                               encoding="utf-8")
    if user is not None:
        user_file.write_text(json.dumps(user), encoding="utf-8")
    return ConfigManager(str(config_file), str(user_file))


def test_defaults_when_file_missing(tmp_path):
    cm = _manager(tmp_path)
    sweep = cm.section("sweep")
    assert sweep["samples"] == 20
    assert sweep["duration_s"] == 60.0
    assert cm.section("engine")["checkpoint_interval"] == 16


def test_file_values_merge_into_defaults(tmp_path):
    cm = _manager(tmp_path, {"pcs": {"channels": 64}, "sweep": {"samples": 3}})
    pcs = cm.model_params("pcs")
    assert pcs["channels"] == 64
    assert pcs["call_mean"] == 2.0
    assert cm.section("sweep")["samples"] == 3
    assert cm.section("sweep")["seed"] == 42


def test_broken_file_falls_back_to_defaults(tmp_path):
    cm = _manager(tmp_path, "{not json")
    assert cm.section("pcs")["channels"] == 512


def test_user_config_wins(tmp_path):
    cm = _manager(tmp_path, {"phold": {"objects": 32}}, {"phold": {"objects": 8}})
    assert cm.model_params("phold")["objects"] == 8


def test_set_preference_persists(tmp_path):
    cm = _manager(tmp_path)
    cm.set_preference("engine", "gvt_period", 128)
    again = ConfigManager(cm.config_file, cm.user_config_file)
    assert again.engine_options("optimistic")["gvt_period"] == 128


def test_unknown_section_is_rejected(tmp_path):
    cm = _manager(tmp_path)
    with pytest.raises(ConfigError):
        cm.section("audio")
    with pytest.raises(ConfigError):
        cm.set_preference("audio", "key", 1)


def test_engine_options(tmp_path):
    cm = _manager(tmp_path, {"engine": {"pin_threads": False, "bind_span": 0.5}})
    opt = cm.engine_options("optimistic")
    assert opt == {"checkpoint_interval": 16, "gvt_period": 4096, "bind_span": 0.5,
                   "band": None, "recent": 8, "pin": False}
    assert cm.engine_options("conservative") == {"pin": False}
    assert cm.engine_options("seq") == {}


@pytest.mark.skipif(tomllib is None, reason="需要 Python 3.11+ 的 tomllib")
def test_toml_config(tmp_path):
    cm = _manager(tmp_path, "[highway]\nzones = 32\nlayout = \"open\"\n", suffix=".toml")
    highway = cm.model_params("highway")
    assert highway["zones"] == 32
    assert highway["layout"] == "open"
    assert highway["lanes"] == 3


def test_repository_config_is_loadable():
    from pathlib import Path
    path = Path(__file__).resolve().parent.parent / "bench_config.json"
    cm = ConfigManager(str(path), None)
    for name in ("engine", "pcs", "highway", "phold", "sweep"):
        assert cm.section(name)
