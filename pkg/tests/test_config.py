"""Config validation: defaults, divisibility rules, violation reporting."""

import pytest

from msiengine.config import (
    ConfigError,
    canonical_json,
    config_hash,
    default_config,
    validate_config,
)


def test_default_gng_config_valid():
    cfg = default_config("gng", 42)
    assert cfg["blocks"]["gng"]["block_size"] == 70
    assert cfg["seed"] == 42


def test_gng_block_size_71_rejected():
    with pytest.raises(ConfigError) as err:
        validate_config({"task": "gng", "seed": 1,
                         "blocks": {"gng": {"block_size": 71}}})
    assert any("composition not exact" in v for v in err.value.violations)


def test_gng_block_size_needs_mixed_divisor():
    # 20/80-divisible but not 7-cue-divisible: fine without mixed blocks,
    # rejected when mixed or adaptive blocks exist.
    raw = {"task": "gng", "seed": 1,
           "blocks": {"gng": {"block_size": 40, "include_mixed": False,
                              "adaptive_blocks": 0}}}
    assert validate_config(raw)["blocks"]["gng"]["block_size"] == 40
    with pytest.raises(ConfigError):
        validate_config({"task": "gng", "seed": 1,
                         "blocks": {"gng": {"block_size": 40}}})


def test_cj_block_size_32_valid():
    cfg = validate_config({"task": "cj", "seed": 3,
                           "blocks": {"cj": {"block_size": 32}}})
    assert cfg["blocks"]["cj"]["block_size"] == 32


def test_cj_block_size_not_multiple_of_8_rejected():
    with pytest.raises(ConfigError) as err:
        validate_config({"task": "cj", "seed": 3,
                         "blocks": {"cj": {"block_size": 30}}})
    assert any("direction triple" in v for v in err.value.violations)


def test_missing_seed_rejected():
    with pytest.raises(ConfigError) as err:
        validate_config({"task": "gng"})
    assert any("seed" in v for v in err.value.violations)


def test_unknown_key_flagged():
    with pytest.raises(ConfigError) as err:
        validate_config({"task": "gng", "seed": 1, "blcoks": {}})
    assert any("unknown config key blcoks" in v for v in err.value.violations)


def test_cj_ramp_must_sum_to_change():
    with pytest.raises(ConfigError) as err:
        validate_config({"task": "cj", "seed": 1,
                         "timing": {"cj": {"ramp_ms": [100, 100, 150]}}})
    assert any("ramp" in v for v in err.value.violations)


def test_fixed_mode_requires_profile():
    with pytest.raises(ConfigError):
        validate_config({"task": "gng", "seed": 1,
                         "thresholding": {"mode": "fixed"}})


def test_fixed_mode_profile_out_of_range():
    with pytest.raises(ConfigError) as err:
        validate_config({
            "task": "gng", "seed": 1,
            "thresholding": {"mode": "fixed",
                             "profile": {"gng": {"visual_go_opacity": 1.4}}}})
    assert err.value.violations


def test_pj_trials_per_block_divisibility():
    with pytest.raises(ConfigError):
        validate_config({"task": "pj", "seed": 1,
                         "blocks": {"pj": {"trials_per_block": 5}}})
    cfg = validate_config({"task": "pj", "seed": 1,
                           "blocks": {"pj": {"trials_per_block": 12}}})
    assert cfg["blocks"]["pj"]["trials_per_block"] == 12


def test_multiple_violations_reported_together():
    with pytest.raises(ConfigError) as err:
        validate_config({"task": "gng",
                         "blocks": {"gng": {"block_size": 71}},
                         "experiment": {"scale_percent": -5}})
    assert len(err.value.violations) >= 3


def test_canonical_json_stable():
    cfg = default_config("cj", 9)
    assert canonical_json(cfg) == canonical_json(validate_config(cfg))
    assert config_hash(cfg) == config_hash(validate_config(cfg))


def test_time_scale_zero_allowed():
    cfg = default_config("gng", 1, timing={"time_scale": 0.0})
    assert cfg["timing"]["time_scale"] == 0.0
    with pytest.raises(ConfigError):
        default_config("gng", 1, timing={"time_scale": -1.0})
