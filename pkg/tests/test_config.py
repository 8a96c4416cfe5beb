import math

import pytest

from kgdiag.config import ConfigError, RunConfig, load_config, parse_config
from kgdiag.geometry import PRESETS


def write(tmp_path, text):
    p = tmp_path / "run.toml"
    p.write_text(text)
    return p


def test_minimal_static_preset_fills_defaults(tmp_path):
    cfg = load_config(write(tmp_path, '[scenario]\nname = "static"\n'))
    assert (cfg.n_points, cfg.horizon, cfg.riccati_order) == (64, 20.0, 3)
    assert cfg.length == pytest.approx(2 * math.pi)
    assert cfg.gap_floor == 0.5


def test_resolution_rule_names_the_product():
    with pytest.raises(ConfigError) as err:
        parse_config({"scenario": {"name": "flrw"}, "time": {"step": 0.5, "horizon": 20.0}})
    msg = str(err.value)
    assert "max|d_t h|*dt" in msg and "0.1" in msg


def test_unknown_scenario_lists_presets():
    with pytest.raises(ConfigError) as err:
        parse_config({"scenario": {"name": "kerr"}})
    for name in PRESETS:
        assert name in str(err.value)


def test_all_problems_reported_together():
    with pytest.raises(ConfigError) as err:
        parse_config({"grid": {"n_points": 48}, "riccati": {"order": -1, "gap_floor": 0.0}})
    assert len(err.value.problems) == 3
    assert any("power of two" in p for p in err.value.problems)


def test_unknown_keys_and_sections():
    with pytest.raises(ConfigError) as err:
        parse_config({"grid": {"points": 64}, "extra": {}})
    text = " ".join(err.value.problems)
    assert "unknown key 'points'" in text and "unknown section [extra]" in text


def test_parse_error_carries_position(tmp_path):
    with pytest.raises(ConfigError) as err:
        load_config(write(tmp_path, "[grid]\nn_points = = 3\n"))
    assert "line 2" in str(err.value)


def test_missing_file():
    with pytest.raises(ConfigError, match="does not exist"):
        load_config("/nonexistent/run.toml")


def test_horizon_must_be_whole_steps():
    with pytest.raises(ConfigError, match="whole number"):
        parse_config({"time": {"horizon": 1.03, "step": 0.05}})


def test_tolerance_overrides():
    cfg = parse_config({"tolerances": {"psd": 1e-9}})
    assert cfg.tolerances["psd"] == 1e-9
    assert cfg.tolerances["identity"] == 1e-8
    with pytest.raises(ConfigError, match="unknown tolerance"):
        parse_config({"tolerances": {"made_up": 1.0}})


def test_config_hash_ignores_output_settings():
    a = RunConfig()
    b = RunConfig(output_dir="elsewhere", cache_policy="readwrite")
    c = RunConfig(n_points=32)
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()
    assert len(a.config_hash()) == 64


def test_scenario_params_merge_defaults():
    cfg = parse_config({"scenario": {"name": "sech", "params": {"amplitude": 0.25}}})
    p = cfg.scenario_params()
    assert p["amplitude"] == 0.25 and p["mass"] == 1 and p["length"] == cfg.length
