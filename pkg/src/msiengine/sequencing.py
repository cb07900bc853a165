"""Seeded construction of fully resolved session plans.

A plan fixes every phase, block, trial multiset, difficulty schedule,
and timing envelope before the session starts. Given the same config
and seed the plan is bit-identical, and it serializes to a canonical
JSON document that survives a parse/serialize round trip unchanged.

Thresholding phases are estimator-driven (their trial levels depend on
responses), so their blocks carry estimator descriptors instead of
resolved trials; everything downstream of thresholding is resolved
against a complete threshold profile.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Any, Mapping, Optional, Sequence, Union

import numpy as np

from .config import canonical_json, config_hash
from .model import (
    ChangeSpec,
    Direction,
    Focus,
    GngCue,
    Modality,
    ModelError,
    Param,
    RampMs,
    Role,
    Shape,
    StimulusSpec,
    ThresholdProfile,
    gng_trial_label,
    scale_intensity,
)


class Task(str, Enum):
    GNG = "gng"
    SJ = "sj"
    TOJ = "toj"
    CJ = "cj"


class PhaseName(str, Enum):
    PRACTICE = "practice"
    THRESHOLDING = "thresholding"
    VERIFICATION = "verification"
    EXPERIMENTAL = "experimental"
    ADAPTIVE = "adaptive"


class BlockKind(str, Enum):
    GNG_TYPED = "gng_typed"
    GNG_MIXED = "gng_mixed"
    SJ = "sj"
    TOJ = "toj"
    CJ_FOCUS = "cj_focus"
    PRACTICE = "practice"
    GNG_STAIRCASE = "gng_staircase"
    CJ_STAIRCASE = "cj_staircase"
    SJ_BANK = "sj_bank"
    QUEST = "quest"
    VERIFICATION = "verification"


class PlanError(ValueError):
    pass


def derive_rng(seed: int, *labels: Union[str, int]) -> np.random.Generator:
    """Independent deterministic stream named by (seed, labels...)."""
    entropy = [seed & 0xFFFFFFFF] + [
        zlib.crc32(str(lbl).encode("utf-8")) for lbl in labels
    ]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def constrained_shuffle(multiset: Sequence, seed: int) -> list:
    """Seeded permutation; the output multiset equals the input multiset."""
    if len(multiset) == 0:
        raise PlanError("cannot shuffle an empty multiset")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(multiset))
    return [multiset[i] for i in order]


def _shuffled(items: list, rng: np.random.Generator) -> list:
    order = rng.permutation(len(items))
    return [items[i] for i in order]


def percent_schedule(kind: str) -> list[float]:
    """Difficulty schedules for the adaptive phases.

    The PJ factor sequence ends at 1.175: five 0.15 steps down from
    1.925 cannot land on 1.1, so the arithmetic is followed as stated.
    """
    if kind in ("gng_adaptive", "cj_adaptive"):
        return [138.0, 126.0, 114.0, 102.0, 90.0]
    if kind == "pj_n":
        return [1.925, 1.775, 1.625, 1.475, 1.325, 1.175]
    raise PlanError(f"unknown schedule kind {kind!r}")


@dataclass(frozen=True)
class GngLabel:
    cue: GngCue

    @cached_property
    def is_go(self) -> bool:
        return gng_trial_label(self.cue) is Role.GO


@dataclass(frozen=True)
class PjLabel:
    soa_ms: int
    judgment: Task  # Task.SJ or Task.TOJ


@dataclass(frozen=True)
class CjLabel:
    focus: Focus
    dirs: Mapping[Modality, Direction]

    def __post_init__(self) -> None:
        object.__setattr__(self, "dirs", dict(self.dirs))


@dataclass(frozen=True)
class DetectLabel:
    """Thresholding trials: what is being calibrated and how to answer.

    ``judge_direction`` switches the expected response from press-if-
    perceived to a two-alternative increase/decrease judgment.
    """

    param: str
    present: bool = True
    direction: Optional[Direction] = None
    judge_direction: bool = False


TrialLabel = Union[GngLabel, PjLabel, CjLabel, DetectLabel]


@dataclass(frozen=True)
class TrialTimeline:
    """Offsets in ms from trial start; the slot is the full trial footprint."""

    stimulus_onsets_ms: tuple[int, ...]
    stimulus_offsets_ms: tuple[int, ...]
    response_open_ms: int
    response_close_ms: int
    iti_ms: int
    warning_onset_ms: Optional[int] = None
    change_window_ms: Optional[tuple[int, int]] = None

    def __post_init__(self) -> None:
        for onset, offset in zip(self.stimulus_onsets_ms, self.stimulus_offsets_ms):
            if onset < 0 or offset < onset:
                raise ModelError("stimulus onsets must be >= 0 and precede offsets")
        if self.response_open_ms < 0 or self.response_close_ms < self.response_open_ms:
            raise ModelError("response window must be ordered and nonnegative")
        if self.iti_ms < 0:
            raise ModelError("inter-trial interval must be >= 0")

    @property
    def slot_ms(self) -> int:
        tail = max((self.response_close_ms, *self.stimulus_offsets_ms))
        return tail + self.iti_ms


@dataclass
class TrialSpec:
    task: Task
    stimuli: tuple[StimulusSpec, ...]
    label: TrialLabel
    timing: TrialTimeline
    block_index: int
    trial_index: int


@dataclass
class PromptSpec:
    text: str
    buttons: tuple[str, ...]
    display_ms: int
    post_gap_ms: int = 0


@dataclass
class BlockPlan:
    kind: BlockKind
    name: str
    trials: Optional[list[TrialSpec]] = None
    estimator: Optional[dict[str, Any]] = None
    difficulty: Optional[float] = None
    rest_after_ms: int = 0
    cue: Optional[PromptSpec] = None

    @property
    def resolved(self) -> bool:
        return self.trials is not None


@dataclass
class PhasePlan:
    name: PhaseName
    blocks: list[BlockPlan] = field(default_factory=list)


@dataclass
class SessionPlan:
    task: str  # config task: gng | pj | cj
    seed: int
    phases: list[PhasePlan]
    config: dict[str, Any]
    deferred: bool = False  # True when experimental/adaptive await live thresholds

    @property
    def config_digest(self) -> str:
        return config_hash(self.config)

    def resolved_trials(self) -> list[TrialSpec]:
        out: list[TrialSpec] = []
        for phase in self.phases:
            for block in phase.blocks:
                if block.trials:
                    out.extend(block.trials)
        return out

    def total_resolved_ms(self) -> int:
        """Virtual-clock footprint of all resolved blocks (cues, trials, rests)."""
        total = 0
        for phase in self.phases:
            for block in phase.blocks:
                if block.trials is None:
                    continue
                if block.cue is not None:
                    total += block.cue.display_ms + block.cue.post_gap_ms
                total += sum(t.timing.slot_ms for t in block.trials)
                total += block.rest_after_ms
        return total


# ---------------------------------------------------------------------------
# GNG construction

_GNG_CUE_TYPES: tuple[frozenset[Modality], ...] = (
    frozenset({Modality.VISUAL}),
    frozenset({Modality.AUDITORY}),
    frozenset({Modality.TACTILE}),
    frozenset({Modality.VISUAL, Modality.AUDITORY}),
    frozenset({Modality.VISUAL, Modality.TACTILE}),
    frozenset({Modality.AUDITORY, Modality.TACTILE}),
    frozenset(Modality),
)


def gng_cue_types() -> tuple[frozenset[Modality], ...]:
    return _GNG_CUE_TYPES


def cue_type_name(mods: frozenset[Modality]) -> str:
    order = [Modality.VISUAL, Modality.AUDITORY, Modality.TACTILE]
    short = {Modality.VISUAL: "V", Modality.AUDITORY: "A", Modality.TACTILE: "T"}
    return "".join(short[m] for m in order if m in mods)


def _gng_stimulus(modality: Modality, role: Role, gng_thresholds: Mapping[str, float],
                  percent: float, duration_ms: int) -> StimulusSpec:
    if modality is Modality.VISUAL:
        key = "visual_go_opacity" if role is Role.GO else "visual_nogo_opacity"
        shape = Shape.GREEN_CHECKMARK if role is Role.GO else Shape.RED_CROSS
        return StimulusSpec(modality, Param.OPACITY, shape,
                            scale_intensity(gng_thresholds[key], percent), duration_ms)
    if modality is Modality.AUDITORY:
        key = "auditory_go_volume" if role is Role.GO else "auditory_nogo_volume"
        return StimulusSpec(modality, Param.VOLUME, Shape.TONE_500HZ,
                            scale_intensity(gng_thresholds[key], percent), duration_ms)
    # Tactile: a Go is the absence of vibration, carried as an explicit
    # zero-drive stimulus so the trial stays observable in the log.
    if role is Role.GO:
        return StimulusSpec(modality, Param.VIBRATION_DRIVE, Shape.VIBRATION, 0.0, 0)
    return StimulusSpec(modality, Param.VIBRATION_DRIVE, Shape.VIBRATION,
                        scale_intensity(gng_thresholds["tactile_nogo_drive"], percent),
                        duration_ms)


def _gng_block(kind: BlockKind, name: str, cue_multiset: list[GngCue],
               profile: Mapping[str, float], percent: float, cfg: Mapping,
               block_index: int, rng: np.random.Generator) -> BlockPlan:
    timing = cfg["timing"]["gng"]
    duration = timing["stimulus_ms"]
    window = timing["response_window_ms"]
    iti_lo, iti_hi = timing["iti_ms"]
    stim_cache: dict[tuple[Modality, Role], StimulusSpec] = {}

    def stim_for(modality: Modality, role: Role) -> StimulusSpec:
        key = (modality, role)
        if key not in stim_cache:
            stim_cache[key] = _gng_stimulus(modality, role, profile, percent, duration)
        return stim_cache[key]

    cues = _shuffled(cue_multiset, rng)
    itis = rng.integers(iti_lo, iti_hi + 1, size=len(cues))
    trials = []
    order = [Modality.VISUAL, Modality.AUDITORY, Modality.TACTILE]
    label_cache: dict[int, GngLabel] = {}
    stimuli_cache: dict[int, tuple[StimulusSpec, ...]] = {}
    for i, cue in enumerate(cues):
        key = id(cue)
        if key not in label_cache:
            label_cache[key] = GngLabel(cue)
            stimuli_cache[key] = tuple(stim_for(m, cue.roles[m])
                                       for m in order if m in cue.roles)
        stimuli = stimuli_cache[key]
        timeline = TrialTimeline(
            stimulus_onsets_ms=tuple(0 for _ in stimuli),
            stimulus_offsets_ms=tuple(s.duration_ms for s in stimuli),
            response_open_ms=0,
            response_close_ms=window,
            iti_ms=int(itis[i]),
        )
        trials.append(TrialSpec(Task.GNG, stimuli, label_cache[key], timeline,
                                block_index, i))
    return BlockPlan(kind=kind, name=name, trials=trials, difficulty=percent)


def _typed_cue_multiset(mods: frozenset[Modality], size: int) -> list[GngCue]:
    n_go = size // 5
    go = GngCue({m: Role.GO for m in mods})
    nogo = GngCue({m: Role.NOGO for m in mods})
    return [go] * n_go + [nogo] * (size - n_go)


def _mixed_cue_multiset(size: int) -> list[GngCue]:
    per_type_go = size // 35
    per_type_nogo = 4 * size // 35
    multiset: list[GngCue] = []
    for mods in _GNG_CUE_TYPES:
        multiset += [GngCue({m: Role.GO for m in mods})] * per_type_go
        multiset += [GngCue({m: Role.NOGO for m in mods})] * per_type_nogo
    return multiset


def _gng_main_phases(cfg: Mapping, profile: ThresholdProfile, seed: int) -> list[PhasePlan]:
    gng_thresholds = profile.require_gng()
    blocks_cfg = cfg["blocks"]["gng"]
    size = blocks_cfg["block_size"]
    percent = float(cfg["experiment"]["scale_percent"])

    experimental: list[BlockPlan] = []
    block_index = 0
    if blocks_cfg["include_typed"]:
        order_rng = derive_rng(seed, "gng", "typed-order")
        typed_order = _shuffled(list(_GNG_CUE_TYPES), order_rng)
        for mods in typed_order:
            rng = derive_rng(seed, "gng", "typed", cue_type_name(mods))
            experimental.append(_gng_block(
                BlockKind.GNG_TYPED, f"gng-{cue_type_name(mods)}",
                _typed_cue_multiset(mods, size), gng_thresholds, percent, cfg,
                block_index, rng))
            block_index += 1
    if blocks_cfg["include_mixed"]:
        rng = derive_rng(seed, "gng", "mixed")
        experimental.append(_gng_block(
            BlockKind.GNG_MIXED, "gng-mixed", _mixed_cue_multiset(size),
            gng_thresholds, percent, cfg, block_index, rng))
        block_index += 1

    adaptive: list[BlockPlan] = []
    schedule = percent_schedule("gng_adaptive")
    for i in range(blocks_cfg["adaptive_blocks"]):
        pct = schedule[min(i, len(schedule) - 1)]
        rng = derive_rng(seed, "gng", "adaptive", i)
        adaptive.append(_gng_block(
            BlockKind.GNG_MIXED, f"gng-adaptive-{i + 1}", _mixed_cue_multiset(size),
            gng_thresholds, pct, cfg, block_index, rng))
        block_index += 1

    phases = [PhasePlan(PhaseName.EXPERIMENTAL, experimental)]
    if adaptive:
        phases.append(PhasePlan(PhaseName.ADAPTIVE, adaptive))
    return phases


def _gng_thresholding_phases(cfg: Mapping) -> list[PhasePlan]:
    from .model import GNG_PARAMS

    th = cfg["thresholding"]
    phases: list[PhasePlan] = []
    for param in GNG_PARAMS:
        practice = BlockPlan(
            kind=BlockKind.PRACTICE, name=f"practice-{param}",
            estimator={"kind": "gng_practice", "param": param,
                       "trials": th["practice"]["gng_trials_per_param"],
                       "intensity": th["practice"]["intensity"]})
        staircase = BlockPlan(
            kind=BlockKind.GNG_STAIRCASE, name=f"staircase-{param}",
            estimator={"kind": "gng_staircase", "param": param, **th["staircase"]})
        verification = BlockPlan(
            kind=BlockKind.VERIFICATION, name=f"verify-{param}",
            estimator={"kind": "gng_verification", "param": param,
                       **th["verification"]})
        phases.append(PhasePlan(PhaseName.PRACTICE, [practice]))
        phases.append(PhasePlan(PhaseName.THRESHOLDING, [staircase]))
        phases.append(PhasePlan(PhaseName.VERIFICATION, [verification]))
    return phases


def build_gng_session(config: Mapping, thresholds: ThresholdProfile, seed: int) -> SessionPlan:
    """Resolved GNG plan: 7 typed blocks + mixed block + adaptive decline."""
    cfg = dict(config)
    return SessionPlan(task="gng", seed=seed,
                       phases=_gng_main_phases(cfg, thresholds, seed), config=cfg)


# ---------------------------------------------------------------------------
# PJ construction

def pj_soa_values(te_sf: float, te_ff: float) -> list[int]:
    """Six SOAs: half, equal, and double the threshold per side."""
    if te_sf > 0 or te_ff < 0:
        raise PlanError("simultaneity thresholds must straddle or touch zero")
    if te_sf == 0 and te_ff == 0:
        raise PlanError("degenerate thresholds: both sides zero")
    values = [te_sf / 2, te_sf, 2 * te_sf, te_ff / 2, te_ff, 2 * te_ff]
    return [int(round(v)) for v in values]


def _pj_trial(soa: int, judgment: Task, cfg: Mapping, block_index: int,
              trial_index: int, rng: np.random.Generator) -> TrialSpec:
    timing = cfg["timing"]["pj"]
    lo, hi = timing["warning_delay_ms"]
    delay = int(rng.integers(lo, hi + 1))
    trailing = timing["trailing_stimulus_ms"]
    intensity = cfg["experiment"]["pj_stimulus_intensity"]
    visual_on = delay if soa >= 0 else delay - soa
    audio_on = delay + soa if soa >= 0 else delay
    end = delay + abs(soa) + trailing
    stimuli = (
        StimulusSpec(Modality.VISUAL, Param.OPACITY, Shape.FADED_CIRCLE,
                     intensity, end - visual_on),
        StimulusSpec(Modality.AUDITORY, Param.TONE_AMPLITUDE, Shape.TONE_500HZ,
                     intensity, end - audio_on),
    )
    timeline = TrialTimeline(
        stimulus_onsets_ms=(visual_on, audio_on),
        stimulus_offsets_ms=(end, end),
        response_open_ms=end,
        response_close_ms=end + timing["response_window_ms"],
        iti_ms=int(timing["iti_ms"][0]),
        warning_onset_ms=0,
    )
    return TrialSpec(judgment, stimuli, PjLabel(soa, judgment), timeline,
                     block_index, trial_index)


def _pj_block(judgment: Task, soas: list[int], cfg: Mapping, name: str,
              block_index: int, difficulty: float,
              rng: np.random.Generator) -> BlockPlan:
    timing = cfg["timing"]["pj"]
    cue_text = ("Judge: did the stimuli happen simultaneously? R2 = yes, L2 = no"
                if judgment is Task.SJ else
                "Judge: which came first? R2 = visual, L2 = auditory")
    trials = [
        _pj_trial(soa, judgment, cfg, block_index, i, rng)
        for i, soa in enumerate(_shuffled(soas, rng))
    ]
    return BlockPlan(
        kind=BlockKind.SJ if judgment is Task.SJ else BlockKind.TOJ,
        name=name, trials=trials, difficulty=difficulty,
        rest_after_ms=timing["rest_between_blocks_ms"],
        cue=PromptSpec(text=cue_text, buttons=("R2", "L2"),
                       display_ms=timing["cue_prompt_ms"],
                       post_gap_ms=timing["post_prompt_gap_ms"]))


def _pj_main_phases(cfg: Mapping, te_sf: float, te_ff: float, seed: int) -> list[PhasePlan]:
    blocks_cfg = cfg["blocks"]["pj"]
    per_block = blocks_cfg["trials_per_block"]
    pairs = blocks_cfg["block_pairs"]
    soa_values = pj_soa_values(te_sf, te_ff)
    copies = per_block // len(soa_values)

    task_multiset = [Task.SJ] * pairs + [Task.TOJ] * pairs
    order = _shuffled(task_multiset, derive_rng(seed, "pj", "st-order"))
    experimental = []
    for b, judgment in enumerate(order):
        rng = derive_rng(seed, "pj", "st-block", b)
        block_soas = soa_values * copies
        experimental.append(_pj_block(
            judgment, block_soas, cfg, f"pj-{judgment.value}-{b + 1}", b, 1.0, rng))

    adaptive = []
    schedule = percent_schedule("pj_n")
    n_trials = blocks_cfg["adaptive_trials_per_block"]
    block_index = len(order)
    for pair_i in range(blocks_cfg["adaptive_block_pairs"]):
        n = schedule[min(pair_i, len(schedule) - 1)]
        pair_rng = derive_rng(seed, "pj", "adaptive-pair", pair_i)
        first_sj = bool(pair_rng.integers(2))
        pair_tasks = [Task.SJ, Task.TOJ] if first_sj else [Task.TOJ, Task.SJ]
        base = [v for v in (n * te_sf, te_sf / n, n * te_ff, te_ff / n)]
        base_int = [int(round(v)) for v in base]
        for judgment in pair_tasks:
            rng = derive_rng(seed, "pj", "adaptive-block", block_index)
            extra_idx = rng.choice(len(base_int), size=n_trials - len(base_int),
                                   replace=False)
            soas = base_int + [base_int[j] for j in extra_idx]
            adaptive.append(_pj_block(
                judgment, soas, cfg,
                f"pj-adaptive-{judgment.value}-{block_index + 1}",
                block_index, n, rng))
            block_index += 1

    phases = [PhasePlan(PhaseName.EXPERIMENTAL, experimental)]
    if adaptive:
        phases.append(PhasePlan(PhaseName.ADAPTIVE, adaptive))
    return phases


def _pj_thresholding_phases(cfg: Mapping) -> list[PhasePlan]:
    th = cfg["thresholding"]["sj_staircase"]
    block = BlockPlan(kind=BlockKind.SJ_BANK, name="sj-staircase-bank",
                      estimator={"kind": "sj_bank", **th})
    return [PhasePlan(PhaseName.THRESHOLDING, [block])]


def build_pj_session(config: Mapping, te_sf: float, te_ff: float, seed: int) -> SessionPlan:
    """Resolved PJ plan: interleaved SJ/TOJ blocks plus the SOA-tightening phase."""
    cfg = dict(config)
    return SessionPlan(task="pj", seed=seed,
                       phases=_pj_main_phases(cfg, te_sf, te_ff, seed), config=cfg)


# ---------------------------------------------------------------------------
# CJ construction

_DIRECTION_TRIPLES: tuple[tuple[Direction, Direction, Direction], ...] = tuple(
    (v, a, t)
    for v in Direction for a in Direction for t in Direction
)


def cj_direction_triples() -> tuple[tuple[Direction, Direction, Direction], ...]:
    """All 8 (visual, auditory, tactile) change-direction combinations."""
    return _DIRECTION_TRIPLES


_CJ_CARRIERS = (
    (Modality.VISUAL, Param.CONTRAST, Shape.CIRCULAR_GRATING),
    (Modality.AUDITORY, Param.TONE_AMPLITUDE, Shape.TONE_500HZ),
    (Modality.TACTILE, Param.VIBRATION_DRIVE, Shape.VIBRATION),
)


def _cj_block(focus: Focus, cfg: Mapping, magnitudes: Mapping, percent: float,
              name: str, block_index: int, rng: np.random.Generator) -> BlockPlan:
    timing = cfg["timing"]["cj"]
    size = cfg["blocks"]["cj"]["block_size"]
    carrier = cfg["experiment"]["cj_carrier_intensity"]
    stim_ms = timing["stimulation_ms"]
    change_ms = timing["change_ms"]
    ramp = RampMs(*timing["ramp_ms"])
    pre_lo, pre_hi = timing["pre_change_ms"]
    window = timing["response_window_ms"]
    iti = int(timing["iti_ms"][0])

    triples = list(_DIRECTION_TRIPLES) * (size // len(_DIRECTION_TRIPLES))
    triples = _shuffled(triples, rng)
    trials = []
    for i, (dv, da, dt) in enumerate(triples):
        dirs = {Modality.VISUAL: dv, Modality.AUDITORY: da, Modality.TACTILE: dt}
        pre = int(rng.integers(pre_lo, pre_hi + 1))
        stimuli = tuple(
            StimulusSpec(m, p, s, carrier, stim_ms,
                         change=ChangeSpec(dirs[m],
                                           scale_intensity(magnitudes[(m, dirs[m])],
                                                           percent),
                                           ramp))
            for m, p, s in _CJ_CARRIERS
        )
        timeline = TrialTimeline(
            stimulus_onsets_ms=(0, 0, 0),
            stimulus_offsets_ms=(stim_ms, stim_ms, stim_ms),
            response_open_ms=stim_ms,
            response_close_ms=stim_ms + window,
            iti_ms=iti,
            change_window_ms=(pre, pre + change_ms),
        )
        trials.append(TrialSpec(Task.CJ, stimuli, CjLabel(focus, dirs), timeline,
                                block_index, i))
    return BlockPlan(
        kind=BlockKind.CJ_FOCUS, name=name, trials=trials, difficulty=percent,
        cue=PromptSpec(text=f"Attend {focus.value}: congruent = R2, incongruent = L2",
                       buttons=("R2", "L2"), display_ms=timing["cue_prompt_ms"]))


def _cj_main_phases(cfg: Mapping, profile: ThresholdProfile, seed: int) -> list[PhasePlan]:
    magnitudes = profile.require_cj()
    blocks_cfg = cfg["blocks"]["cj"]
    percent = float(cfg["experiment"]["scale_percent"])

    foci = list(Focus)
    perm = _shuffled(foci, derive_rng(seed, "cj", "focus-order"))
    sequence = perm * blocks_cfg["focus_repeats"]
    experimental = []
    for b, focus in enumerate(sequence):
        rng = derive_rng(seed, "cj", "block", b)
        experimental.append(_cj_block(focus, cfg, magnitudes, percent,
                                      f"cj-{focus.value}-{b + 1}", b, rng))

    adaptive = []
    schedule = percent_schedule("cj_adaptive")
    block_index = len(sequence)
    for round_i in range(blocks_cfg["adaptive_rounds"]):
        pct = schedule[min(round_i, len(schedule) - 1)]
        round_perm = _shuffled(foci, derive_rng(seed, "cj", "adaptive-order", round_i))
        for focus in round_perm:
            rng = derive_rng(seed, "cj", "adaptive-block", block_index)
            adaptive.append(_cj_block(
                focus, cfg, magnitudes, pct,
                f"cj-adaptive-{focus.value}-{block_index + 1}", block_index, rng))
            block_index += 1

    phases = [PhasePlan(PhaseName.EXPERIMENTAL, experimental)]
    if adaptive:
        phases.append(PhasePlan(PhaseName.ADAPTIVE, adaptive))
    return phases


def _cj_thresholding_phases(cfg: Mapping) -> list[PhasePlan]:
    th = cfg["thresholding"]
    practice = BlockPlan(
        kind=BlockKind.PRACTICE, name="cj-practice",
        estimator={"kind": "cj_practice",
                   "trials_per_condition": th["practice"]["cj_trials_per_condition"],
                   "intensity": th["practice"]["intensity"]})
    staircases = [
        BlockPlan(kind=BlockKind.CJ_STAIRCASE,
                  name=f"cj-staircase-{m.value}-{d.value}",
                  estimator={"kind": "cj_staircase", "modality": m.value,
                             "direction": d.value, **th["staircase"]})
        for m in Modality for d in Direction
    ]
    verification = BlockPlan(
        kind=BlockKind.VERIFICATION, name="cj-verify",
        estimator={"kind": "cj_verification", **th["verification"]})
    quests = [
        BlockPlan(kind=BlockKind.QUEST, name=f"cj-quest-{m.value}",
                  estimator={"kind": "quest", "modality": m.value, **th["quest"]})
        for m in Modality
    ]
    return [
        PhasePlan(PhaseName.PRACTICE, [practice]),
        PhasePlan(PhaseName.THRESHOLDING, staircases),
        PhasePlan(PhaseName.VERIFICATION, [verification]),
        PhasePlan(PhaseName.THRESHOLDING, quests),
    ]


def build_cj_session(config: Mapping, thresholds: ThresholdProfile, seed: int) -> SessionPlan:
    """Resolved CJ plan: 6 focus blocks of 32 plus the 15-block decline."""
    cfg = dict(config)
    return SessionPlan(task="cj", seed=seed,
                       phases=_cj_main_phases(cfg, thresholds, seed), config=cfg)


# ---------------------------------------------------------------------------
# Unified entry used by the task machine

def build_session(config: Mapping, thresholds: Optional[ThresholdProfile] = None) -> SessionPlan:
    """Plan for a whole session under the config's thresholding mode.

    Live mode prepends estimator-driven thresholding phases and defers
    the main phases until estimates exist; fixed mode resolves the main
    phases immediately from the configured (or given) profile.
    """
    task = config["task"]
    seed = config["seed"]
    mode = config["thresholding"]["mode"]
    if thresholds is None and config["thresholding"]["profile"]:
        from .model import profile_from_dict

        thresholds = profile_from_dict(config["thresholding"]["profile"])

    phases: list[PhasePlan] = []
    deferred = False
    if mode == "live":
        if task == "gng":
            phases += _gng_thresholding_phases(config)
        elif task == "pj":
            phases += _pj_thresholding_phases(config)
        elif task == "cj":
            phases += _cj_thresholding_phases(config)
        deferred = True
    else:
        if thresholds is None:
            raise PlanError("fixed thresholding mode requires a threshold profile")
        phases += resolve_main_phases(config, thresholds)
    return SessionPlan(task=task, seed=seed, phases=phases,
                       config=dict(config), deferred=deferred)


def resolve_main_phases(config: Mapping, thresholds: ThresholdProfile) -> list[PhasePlan]:
    task = config["task"]
    seed = config["seed"]
    if task == "gng":
        return _gng_main_phases(config, thresholds, seed)
    if task == "pj":
        pj = thresholds.require_pj()
        return _pj_main_phases(config, pj.te_sound_first, pj.te_flash_first, seed)
    if task == "cj":
        return _cj_main_phases(config, thresholds, seed)
    raise PlanError(f"unknown task {task!r}")


# ---------------------------------------------------------------------------
# Canonical plan document

def _stimulus_to_dict(s: StimulusSpec) -> dict:
    out: dict[str, Any] = {
        "modality": s.modality.value, "param": s.param.value,
        "shape": s.shape.value, "intensity": s.intensity,
        "duration_ms": s.duration_ms,
    }
    if s.change is not None:
        out["change"] = {
            "direction": s.change.direction.value,
            "magnitude": s.change.magnitude,
            "ramp": [s.change.ramp.up_ms, s.change.ramp.hold_ms, s.change.ramp.down_ms],
        }
    return out


def _stimulus_from_dict(d: Mapping) -> StimulusSpec:
    change = None
    if d.get("change"):
        c = d["change"]
        change = ChangeSpec(Direction(c["direction"]), c["magnitude"], RampMs(*c["ramp"]))
    return StimulusSpec(Modality(d["modality"]), Param(d["param"]), Shape(d["shape"]),
                        d["intensity"], d["duration_ms"], change)


def _label_to_dict(label: TrialLabel) -> dict:
    if isinstance(label, GngLabel):
        return {"kind": "gng",
                "roles": {m.value: r.value for m, r in sorted(label.cue.roles.items(),
                                                              key=lambda kv: kv[0].value)}}
    if isinstance(label, PjLabel):
        return {"kind": "pj", "soa_ms": label.soa_ms, "judgment": label.judgment.value}
    if isinstance(label, CjLabel):
        return {"kind": "cj", "focus": label.focus.value,
                "dirs": {m.value: d.value for m, d in sorted(label.dirs.items(),
                                                             key=lambda kv: kv[0].value)}}
    if isinstance(label, DetectLabel):
        return {"kind": "detect", "param": label.param, "present": label.present,
                "direction": label.direction.value if label.direction else None,
                "judge_direction": label.judge_direction}
    raise PlanError(f"unknown label type {type(label)!r}")


def _label_from_dict(d: Mapping) -> TrialLabel:
    kind = d["kind"]
    if kind == "gng":
        return GngLabel(GngCue({Modality(m): Role(r) for m, r in d["roles"].items()}))
    if kind == "pj":
        return PjLabel(d["soa_ms"], Task(d["judgment"]))
    if kind == "cj":
        return CjLabel(Focus(d["focus"]),
                       {Modality(m): Direction(v) for m, v in d["dirs"].items()})
    if kind == "detect":
        return DetectLabel(d["param"], d["present"],
                           Direction(d["direction"]) if d.get("direction") else None,
                           d.get("judge_direction", False))
    raise PlanError(f"unknown label kind {kind!r}")


def trial_to_dict(t: TrialSpec) -> dict:
    tl = t.timing
    timing: dict[str, Any] = {
        "onsets_ms": list(tl.stimulus_onsets_ms),
        "offsets_ms": list(tl.stimulus_offsets_ms),
        "response_open_ms": tl.response_open_ms,
        "response_close_ms": tl.response_close_ms,
        "iti_ms": tl.iti_ms,
    }
    if tl.warning_onset_ms is not None:
        timing["warning_onset_ms"] = tl.warning_onset_ms
    if tl.change_window_ms is not None:
        timing["change_window_ms"] = list(tl.change_window_ms)
    return {
        "task": t.task.value,
        "stimuli": [_stimulus_to_dict(s) for s in t.stimuli],
        "label": _label_to_dict(t.label),
        "timing": timing,
        "block_index": t.block_index,
        "trial_index": t.trial_index,
    }


def trial_from_dict(d: Mapping) -> TrialSpec:
    timing = d["timing"]
    timeline = TrialTimeline(
        stimulus_onsets_ms=tuple(timing["onsets_ms"]),
        stimulus_offsets_ms=tuple(timing["offsets_ms"]),
        response_open_ms=timing["response_open_ms"],
        response_close_ms=timing["response_close_ms"],
        iti_ms=timing["iti_ms"],
        warning_onset_ms=timing.get("warning_onset_ms"),
        change_window_ms=tuple(timing["change_window_ms"]) if timing.get("change_window_ms") else None,
    )
    return TrialSpec(Task(d["task"]), tuple(_stimulus_from_dict(s) for s in d["stimuli"]),
                     _label_from_dict(d["label"]), timeline,
                     d["block_index"], d["trial_index"])


def _block_to_dict(b: BlockPlan) -> dict:
    out: dict[str, Any] = {"kind": b.kind.value, "name": b.name,
                           "difficulty": b.difficulty,
                           "rest_after_ms": b.rest_after_ms}
    out["trials"] = [trial_to_dict(t) for t in b.trials] if b.trials is not None else None
    out["estimator"] = b.estimator
    out["cue"] = None if b.cue is None else {
        "text": b.cue.text, "buttons": list(b.cue.buttons),
        "display_ms": b.cue.display_ms, "post_gap_ms": b.cue.post_gap_ms,
    }
    return out


def _block_from_dict(d: Mapping) -> BlockPlan:
    cue = None
    if d.get("cue"):
        c = d["cue"]
        cue = PromptSpec(c["text"], tuple(c["buttons"]), c["display_ms"], c["post_gap_ms"])
    trials = None
    if d.get("trials") is not None:
        trials = [trial_from_dict(t) for t in d["trials"]]
    return BlockPlan(kind=BlockKind(d["kind"]), name=d["name"], trials=trials,
                     estimator=d.get("estimator"), difficulty=d.get("difficulty"),
                     rest_after_ms=d.get("rest_after_ms", 0), cue=cue)


def plan_to_dict(plan: SessionPlan) -> dict:
    return {
        "task": plan.task,
        "seed": plan.seed,
        "deferred": plan.deferred,
        "config_hash": plan.config_digest,
        "config": plan.config,
        "phases": [
            {"name": p.name.value, "blocks": [_block_to_dict(b) for b in p.blocks]}
            for p in plan.phases
        ],
    }


def plan_from_dict(d: Mapping) -> SessionPlan:
    return SessionPlan(
        task=d["task"], seed=d["seed"],
        phases=[PhasePlan(PhaseName(p["name"]),
                          [_block_from_dict(b) for b in p["blocks"]])
                for p in d["phases"]],
        config=dict(d["config"]), deferred=d.get("deferred", False),
    )


def plan_to_json(plan: SessionPlan) -> str:
    return canonical_json(plan_to_dict(plan))
