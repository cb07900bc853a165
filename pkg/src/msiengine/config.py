"""Session configuration: defaults, normalization, and validation.

A session config is a single JSON document with sections ``task``,
``seed``, ``blocks``, ``timing``, ``buttons``, and ``thresholding``
(plus ``experiment``, ``questionnaires``, and ``observer`` knobs).
``validate_config`` resolves defaults and either returns the normalized
config or raises ``ConfigError`` carrying the full violation list.
The schema is documented in docs/config.md.
"""

from __future__ import annotations

import copy
import hashlib
import json
from typing import Any, Mapping

from .model import GNG_PARAMS, ModelError, profile_from_dict

TASKS = ("gng", "pj", "cj")

#: Number of Go/NoGo cue types (nonempty modality subsets); mixed blocks
#: need the 20/80 split to be exact within each cue type.
GNG_CUE_TYPES = 7
GNG_MIXED_DIVISOR = 35  # 7 cue types x (1 Go + 4 NoGo)
CJ_CONFIGS = 8  # direction triples over three modalities


DEFAULTS: dict[str, Any] = {
    "task": "gng",
    "seed": None,
    "blocks": {
        "gng": {
            "block_size": 70,
            "include_typed": True,
            "include_mixed": True,
            "adaptive_blocks": 5,
        },
        "pj": {
            "trials_per_block": 6,
            "block_pairs": 6,
            "adaptive_block_pairs": 6,
            "adaptive_trials_per_block": 6,
        },
        "cj": {
            "block_size": 32,
            "focus_repeats": 2,
            "adaptive_rounds": 5,
        },
    },
    "timing": {
        "time_scale": 1.0,
        "gng": {
            "stimulus_ms": 500,
            "response_window_ms": 1000,
            "iti_ms": [1000, 1500],
        },
        "pj": {
            "warning_delay_ms": [500, 1000],
            "trailing_stimulus_ms": 150,
            "response_window_ms": 10000,
            "rest_between_blocks_ms": 7000,
            "cue_prompt_ms": 2000,
            "post_prompt_gap_ms": 100,
            "iti_ms": [500, 500],
        },
        "cj": {
            "pre_change_ms": [700, 1000],
            "change_ms": 300,
            "ramp_ms": [100, 100, 100],
            "stimulation_ms": 2000,
            "response_window_ms": 3000,
            "iti_ms": [1000, 1000],
            "cue_prompt_ms": 2000,
        },
    },
    "buttons": {
        "go": "X",
        "affirm": "R2",
        "negate": "L2",
    },
    "thresholding": {
        "mode": "live",  # "live" runs estimators; "fixed" uses the profile below
        "profile": None,
        "staircase": {
            "start": 0.02,
            "step": 0.02,
            "confirmations": 2,
            "max_trials": 100,
        },
        "sj_staircase": {
            "initial_step_ms": 30,
            "floor_ms": 10,
            "max_reversals": 8,
            "max_trials": 40,
            "soa_cap_ms": 1000,
        },
        "quest": {
            "grid_min": 0.005,
            "grid_max": 1.0,
            "grid_points": 200,
            "beta": 3.5,
            "gamma": 0.5,
            "delta": 0.02,
            "trials_per_direction": 30,
            "prior_sigma_octaves": 0.5,
        },
        "verification": {
            "trials": 10,
            "pass_fraction": 0.8,
            "raise_factor": 1.25,
            "max_attempts": 10,
            "gng_scale_percent": 150,
        },
        "practice": {
            "gng_trials_per_param": 4,
            "cj_trials_per_condition": 1,
            "intensity": 0.9,
        },
    },
    "experiment": {
        "scale_percent": 150,
        "cj_carrier_intensity": 0.5,
        "pj_stimulus_intensity": 0.8,
    },
    "questionnaires": ["nasa_tlx", "presence"],
}


class ConfigError(ValueError):
    """All schema violations found in one pass."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(violations))


def _merge_defaults(defaults: Mapping, given: Mapping, path: str, errors: list[str]) -> dict:
    out: dict = {}
    for key, default in defaults.items():
        if key in given:
            value = given[key]
            if isinstance(default, Mapping) and isinstance(value, Mapping):
                out[key] = _merge_defaults(default, value, f"{path}{key}.", errors)
            else:
                out[key] = copy.deepcopy(value)
        else:
            out[key] = copy.deepcopy(default)
    for key in given:
        if key not in defaults:
            errors.append(f"unknown config key {path}{key}")
    return out


def _check_range_pair(value: Any, name: str, errors: list[str]) -> None:
    ok = (
        isinstance(value, (list, tuple))
        and len(value) == 2
        and all(isinstance(v, (int, float)) and v >= 0 for v in value)
        and value[0] <= value[1]
    )
    if not ok:
        errors.append(f"{name} must be a [lo, hi] millisecond pair with lo <= hi")


def validate_config(raw: Mapping[str, Any]) -> dict[str, Any]:
    """Normalize a parsed config document, or raise ConfigError.

    Checks the structural rules the protocols depend on: intensity
    ranges, block-size divisibility for exact trial compositions, and
    presence of the seed that makes every plan reproducible.
    """
    errors: list[str] = []
    cfg = _merge_defaults(DEFAULTS, raw, "", errors)

    task = cfg.get("task")
    if task not in TASKS:
        errors.append(f"task must be one of {TASKS}, got {task!r}")

    seed = cfg.get("seed")
    if not isinstance(seed, int) or isinstance(seed, bool):
        errors.append("seed is required and must be an integer")

    blocks = cfg["blocks"]
    gng_size = blocks["gng"]["block_size"]
    if not isinstance(gng_size, int) or gng_size <= 0:
        errors.append("blocks.gng.block_size must be a positive integer")
    else:
        if gng_size % 5 != 0:
            errors.append(
                f"GNG composition not exact: block size {gng_size} not divisible "
                "by 5 (20% Go / 80% NoGo rule)"
            )
        needs_mixed = blocks["gng"]["include_mixed"] or blocks["gng"]["adaptive_blocks"] > 0
        if needs_mixed and gng_size % GNG_MIXED_DIVISOR != 0:
            errors.append(
                f"GNG composition not exact: mixed-block size {gng_size} not divisible "
                f"by {GNG_MIXED_DIVISOR} (7 cue types x 20/80 split)"
            )
    if blocks["gng"]["adaptive_blocks"] < 0:
        errors.append("blocks.gng.adaptive_blocks must be >= 0")

    pj_trials = blocks["pj"]["trials_per_block"]
    pj_pairs = blocks["pj"]["block_pairs"]
    if not isinstance(pj_trials, int) or pj_trials <= 0:
        errors.append("blocks.pj.trials_per_block must be a positive integer")
    elif pj_trials % 6 != 0:
        errors.append(
            f"PJ composition not exact: trials per block {pj_trials} not divisible "
            "by 6 (six SOA values, equal probability)"
        )
    if not isinstance(pj_pairs, int) or pj_pairs <= 0:
        errors.append("blocks.pj.block_pairs must be a positive integer")
    if blocks["pj"]["adaptive_trials_per_block"] < 4:
        errors.append("blocks.pj.adaptive_trials_per_block must be >= 4 (four SOA values)")

    cj_size = blocks["cj"]["block_size"]
    if not isinstance(cj_size, int) or cj_size <= 0:
        errors.append("blocks.cj.block_size must be a positive integer")
    elif cj_size % CJ_CONFIGS != 0:
        errors.append(
            f"CJ composition not exact: block size {cj_size} not divisible by "
            f"{CJ_CONFIGS} (each direction triple equally often)"
        )
    if blocks["cj"]["focus_repeats"] <= 0:
        errors.append("blocks.cj.focus_repeats must be >= 1")

    timing = cfg["timing"]
    if not isinstance(timing["time_scale"], (int, float)) or timing["time_scale"] < 0:
        errors.append("timing.time_scale must be >= 0")
    _check_range_pair(timing["gng"]["iti_ms"], "timing.gng.iti_ms", errors)
    _check_range_pair(timing["pj"]["warning_delay_ms"], "timing.pj.warning_delay_ms", errors)
    _check_range_pair(timing["cj"]["pre_change_ms"], "timing.cj.pre_change_ms", errors)
    ramp = timing["cj"]["ramp_ms"]
    if not (isinstance(ramp, (list, tuple)) and len(ramp) == 3 and all(r >= 0 for r in ramp)):
        errors.append("timing.cj.ramp_ms must be an [up, hold, down] triple")
    elif sum(ramp) != timing["cj"]["change_ms"]:
        errors.append("timing.cj.ramp_ms must sum to timing.cj.change_ms")
    stim_ms = timing["cj"]["stimulation_ms"]
    pre_lo, pre_hi = (
        timing["cj"]["pre_change_ms"] if isinstance(timing["cj"]["pre_change_ms"], (list, tuple))
        and len(timing["cj"]["pre_change_ms"]) == 2 else (0, 0)
    )
    if pre_hi + timing["cj"]["change_ms"] > stim_ms:
        errors.append("CJ change cannot fit: pre-change max + change exceeds total stimulation")

    th = cfg["thresholding"]
    if th["mode"] not in ("live", "fixed"):
        errors.append("thresholding.mode must be 'live' or 'fixed'")
    if th["mode"] == "fixed":
        if not th["profile"]:
            errors.append("thresholding.mode 'fixed' requires thresholding.profile")
        else:
            try:
                profile = profile_from_dict(th["profile"])
                if task == "gng":
                    profile.require_gng()
                elif task == "cj":
                    profile.require_cj()
                elif task == "pj":
                    profile.require_pj()
            except (ModelError, KeyError, ValueError) as exc:
                errors.append(f"thresholding.profile invalid: {exc}")
    for name, value in (th["profile"] or {}).get("gng", {}).items():
        if name in GNG_PARAMS and not (0.0 <= value <= 1.0):
            errors.append(f"threshold {name} out of range [0, 1]: {value}")

    sc = th["staircase"]
    for key in ("start", "step"):
        if not (0.0 < sc[key] <= 1.0):
            errors.append(f"thresholding.staircase.{key} must lie in (0, 1]")
    if sc["confirmations"] < 1:
        errors.append("thresholding.staircase.confirmations must be >= 1")

    q = th["quest"]
    if not (0.0 < q["grid_min"] < q["grid_max"] <= 1.0):
        errors.append("quest grid must satisfy 0 < grid_min < grid_max <= 1")
    if q["grid_points"] < 2:
        errors.append("quest.grid_points must be >= 2")
    if not (0.0 <= q["gamma"] < 1.0 and 0.0 <= q["delta"] < 0.5):
        errors.append("quest gamma/delta out of range")

    ver = th["verification"]
    if not (0.0 < ver["pass_fraction"] <= 1.0):
        errors.append("verification.pass_fraction must lie in (0, 1]")
    if ver["trials"] < 1:
        errors.append("verification.trials must be >= 1")

    pr = th["practice"]
    if not (0.0 <= pr["intensity"] <= 1.0):
        errors.append("practice.intensity must lie in [0, 1]")

    exp = cfg["experiment"]
    if exp["scale_percent"] <= 0:
        errors.append("experiment.scale_percent must be positive")
    for key in ("cj_carrier_intensity", "pj_stimulus_intensity"):
        if not (0.0 <= exp[key] <= 1.0):
            errors.append(f"experiment.{key} out of range [0, 1]")

    for kind in cfg["questionnaires"]:
        if kind not in ("nasa_tlx", "presence"):
            errors.append(f"unknown questionnaire kind {kind!r}")

    if errors:
        raise ConfigError(errors)
    return cfg


def canonical_json(value: Any) -> str:
    """Stable serialization used for config hashing and plan documents."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(cfg: Mapping[str, Any]) -> str:
    return hashlib.sha256(canonical_json(cfg).encode("utf-8")).hexdigest()[:16]


def load_config(path: str) -> dict[str, Any]:
    with open(path, "r", encoding="utf-8") as fh:
        return validate_config(json.load(fh))


def default_config(task: str, seed: int, **overrides: Any) -> dict[str, Any]:
    """Convenience builder used by tests and the simulator."""
    raw: dict[str, Any] = {"task": task, "seed": seed}
    raw.update(overrides)
    return validate_config(raw)
