"""Event-sourced state machines that execute a session plan.

The machine never waits and never draws wall-clock time: it emits the
unique next action (present a trial, show a prompt, rest, ask a
questionnaire), and consumes timestamped event records. Feeding the
same plan the same ordered events always lands in the same state, so a
recorded log replays to the live final state bit for bit.

During thresholding phases the machine owns the adaptive estimators and
materializes their trials one at a time; once every estimate is in, the
deferred experimental and adaptive phases are resolved from the
measured threshold profile with the session seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping, Optional, Sequence, Union

import numpy as np

from . import adaptive
from .adaptive import (
    QuestState,
    Response,
    SjResponse,
    SjStaircaseBank,
    StaircaseState,
    new_quest,
    new_sj_bank,
    new_staircase,
    quest_query,
    quest_update,
    sj_select_next,
    sj_staircase_update,
    sj_thresholds,
    staircase_step,
)
from .config import canonical_json
from .events import EventKind, EventRecord
from .model import (
    ButtonId,
    ChangeSpec,
    Direction,
    Focus,
    Modality,
    Param,
    PjThresholds,
    RampMs,
    Role,
    Shape,
    StimulusSpec,
    ThresholdProfile,
    cj_correct_answer,
    profile_from_dict,
    scale_intensity,
)
from .sequencing import (
    BlockKind,
    BlockPlan,
    CjLabel,
    DetectLabel,
    GngLabel,
    PhaseName,
    PhasePlan,
    PjLabel,
    PromptSpec,
    SessionPlan,
    Task,
    TrialSpec,
    TrialTimeline,
    build_session,
    cue_type_name,
    derive_rng,
    resolve_main_phases,
    trial_to_dict,
)


class MachineError(RuntimeError):
    pass


class Status(str, Enum):
    IDLE = "idle"
    AWAITING_PRESENTATION = "awaiting_presentation"
    AWAITING_RESPONSE = "awaiting_response"
    RESTING = "resting"
    DONE = "done"


class Classification(str, Enum):
    HIT = "hit"
    MISS = "miss"
    FALSE_ALARM = "false_alarm"
    CORRECT_REJECTION = "correct_rejection"
    CORRECT = "correct"
    INCORRECT = "incorrect"
    NO_RESPONSE = "no_response"
    LATE = "late"


class Gate(str, Enum):
    PASS = "pass"
    REPEAT = "repeat"


def verification_gate(results: Sequence[bool], pass_fraction: float = 0.8) -> Gate:
    """Pass iff the correct fraction reaches the configured criterion."""
    if len(results) == 0:
        raise MachineError("verification gate needs at least one result")
    correct = sum(1 for r in results if r)
    return Gate.PASS if correct / len(results) >= pass_fraction else Gate.REPEAT


# ---------------------------------------------------------------------------
# Actions

@dataclass(frozen=True)
class PresentAction:
    trial: TrialSpec

    def describe(self) -> dict:
        return {"action": "present", "trial": trial_to_dict(self.trial)}


@dataclass(frozen=True)
class PromptAction:
    prompt: PromptSpec

    def describe(self) -> dict:
        return {"action": "prompt", "text": self.prompt.text,
                "buttons": list(self.prompt.buttons),
                "display_ms": self.prompt.display_ms,
                "post_gap_ms": self.prompt.post_gap_ms}


@dataclass(frozen=True)
class RestAction:
    ms: int

    def describe(self) -> dict:
        return {"action": "rest", "ms": self.ms}


@dataclass(frozen=True)
class PhaseEnterAction:
    name: PhaseName
    phase_index: int

    def describe(self) -> dict:
        return {"action": "phase_enter", "phase": self.name.value,
                "phase_index": self.phase_index}


@dataclass(frozen=True)
class QuestionnaireAction:
    kind: str

    def describe(self) -> dict:
        return {"action": "questionnaire", "kind": self.kind}


@dataclass(frozen=True)
class DoneAction:
    def describe(self) -> dict:
        return {"action": "done"}


Action = Union[PresentAction, PromptAction, RestAction, PhaseEnterAction,
               QuestionnaireAction, DoneAction]


@dataclass
class TrialOutcome:
    phase: PhaseName
    block_index: int
    trial_index: int
    block_name: str
    block_kind: BlockKind
    task: Task
    condition: str
    difficulty: Optional[float]
    label: dict
    button: Optional[ButtonId]
    rt_ms: Optional[float]
    classification: Optional[Classification]
    judgment: Optional[str] = None
    late: bool = False
    level: Optional[float] = None  # tested level, calibration trials only

    def to_dict(self) -> dict:
        return {
            "phase": self.phase.value,
            "block_index": self.block_index,
            "trial_index": self.trial_index,
            "block_name": self.block_name,
            "block_kind": self.block_kind.value,
            "task": self.task.value,
            "condition": self.condition,
            "difficulty": self.difficulty,
            "label": self.label,
            "button": self.button.value if self.button else None,
            "rt_ms": self.rt_ms,
            "classification": self.classification.value if self.classification else None,
            "judgment": self.judgment,
            "late": self.late,
            "level": self.level,
        }


def trial_condition(trial: TrialSpec) -> str:
    label = trial.label
    if isinstance(label, GngLabel):
        return cue_type_name(label.cue.modalities)
    if isinstance(label, PjLabel):
        return f"{label.judgment.value}@{label.soa_ms:+d}"
    if isinstance(label, CjLabel):
        return label.focus.value
    if isinstance(label, DetectLabel):
        return label.param
    return "unknown"


def score_trial(trial: TrialSpec, button: Optional[ButtonId],
                in_window: bool) -> tuple[Optional[Classification], Optional[str]]:
    """Classification and, for simultaneity judgments, the recorded judgment."""
    label = trial.label
    responded = button is not None and in_window
    if isinstance(label, GngLabel):
        if label.is_go:
            return (Classification.HIT if responded else Classification.MISS), None
        return (Classification.FALSE_ALARM if responded
                else Classification.CORRECT_REJECTION), None
    if isinstance(label, PjLabel):
        if not responded:
            return Classification.NO_RESPONSE, None
        if label.judgment is Task.SJ:
            judgment = ("simultaneous" if button is ButtonId.R2
                        else "not_simultaneous")
            return None, judgment
        if label.soa_ms == 0:
            return Classification.CORRECT, None
        correct = (button is ButtonId.R2) == (label.soa_ms > 0)
        return (Classification.CORRECT if correct else Classification.INCORRECT), None
    if isinstance(label, CjLabel):
        if not responded:
            return Classification.NO_RESPONSE, None
        congruent = cj_correct_answer(label.focus, label.dirs)
        correct = (button is ButtonId.R2) == congruent
        return (Classification.CORRECT if correct else Classification.INCORRECT), None
    if isinstance(label, DetectLabel):
        if label.judge_direction:
            if not responded:
                return Classification.NO_RESPONSE, None
            answered_up = button is ButtonId.R2
            correct = answered_up == (label.direction is Direction.INCREASE)
            return (Classification.CORRECT if correct else Classification.INCORRECT), None
        return (Classification.HIT if responded else Classification.MISS), None
    raise MachineError(f"cannot score label {type(label)!r}")


# ---------------------------------------------------------------------------
# Estimator runtime for thresholding blocks

_CJ_PARAM_BY_MODALITY = {
    Modality.VISUAL: (Param.CONTRAST, Shape.CIRCULAR_GRATING),
    Modality.AUDITORY: (Param.TONE_AMPLITUDE, Shape.TONE_500HZ),
    Modality.TACTILE: (Param.VIBRATION_DRIVE, Shape.VIBRATION),
}

_GNG_PARAM_INFO = {
    "visual_go_opacity": (Modality.VISUAL, Param.OPACITY, Shape.GREEN_CHECKMARK),
    "visual_nogo_opacity": (Modality.VISUAL, Param.OPACITY, Shape.RED_CROSS),
    "auditory_go_volume": (Modality.AUDITORY, Param.VOLUME, Shape.TONE_500HZ),
    "auditory_nogo_volume": (Modality.AUDITORY, Param.VOLUME, Shape.TONE_500HZ),
    "tactile_nogo_drive": (Modality.TACTILE, Param.VIBRATION_DRIVE, Shape.VIBRATION),
}


@dataclass
class EstimatorRuntime:
    kind: str
    spec: dict
    staircase: Optional[StaircaseState] = None
    bank: Optional[SjStaircaseBank] = None
    quests: Optional[dict[Direction, QuestState]] = None
    quest_directions: list[Direction] = field(default_factory=list)
    active_sj_id: Optional[str] = None
    results: list[bool] = field(default_factory=list)
    attempt: int = 0
    mode: str = "main"  # verification blocks flip between "verify" and "restair"
    trial_counter: int = 0
    fixed_trials: Optional[list[TrialSpec]] = None
    finished: bool = False


class TaskSession:
    """One session: plan, cursor, estimators, outcomes, status."""

    def __init__(self, config: Mapping[str, Any],
                 plan: Optional[SessionPlan] = None):
        self.config = dict(config)
        self.plan = plan if plan is not None else build_session(self.config)
        self.seed = self.config["seed"]
        self.task = self.config["task"]
        self.phase_i = 0
        self.block_i = 0
        self.trial_i = 0
        self.stage = "phase_enter"  # phase_enter|block_cue|trial|rest|questionnaire|done
        self.awaiting: Optional[str] = None
        self.current_trial: Optional[TrialSpec] = None
        self.commanded_t_ns: Optional[int] = None
        self.shown_onset_ns: Optional[int] = None
        self.outcomes: list[TrialOutcome] = []
        self.calibration_outcomes: list[TrialOutcome] = []
        self.estimator: Optional[EstimatorRuntime] = None
        self.measured_gng: dict[str, float] = {}
        self.measured_cj: dict[tuple[Modality, Direction], float] = {}
        self.measured_pj: Optional[tuple[float, float]] = None
        self.violations: list[str] = []
        self.questionnaire_answers: dict[str, list[float]] = {}
        self.q_index = 0
        self.suspended = False
        self.frame_intervals: list[float] = []
        self._started = False
        self._timeout_outcome: Optional[TrialOutcome] = None
        if self.config["thresholding"]["mode"] == "fixed":
            profile = profile_from_dict(self.config["thresholding"]["profile"])
            self.measured_gng.update(profile.gng)
            self.measured_cj.update(profile.cj)
            if profile.pj is not None:
                self.measured_pj = (profile.pj.te_sound_first,
                                    profile.pj.te_flash_first)
        self._enter_position()

    # -- public surface ------------------------------------------------------

    @property
    def status(self) -> Status:
        if self.stage == "done":
            return Status.DONE
        if self.stage == "rest":
            return Status.RESTING
        if self.awaiting in ("resolution", "prompt_cleared", "questionnaire"):
            return Status.AWAITING_RESPONSE
        if not self._started:
            return Status.IDLE
        return Status.AWAITING_PRESENTATION

    @property
    def done(self) -> bool:
        return self.stage == "done"

    def next_action(self) -> Action:
        """The unique pending action; pure, never mutates the session."""
        if self.stage == "done":
            raise MachineError("session is done; no further actions")
        if self.stage == "phase_enter":
            phase = self.plan.phases[self.phase_i]
            return PhaseEnterAction(phase.name, self.phase_i)
        if self.stage == "block_cue":
            block = self._block()
            assert block.cue is not None
            return PromptAction(block.cue)
        if self.stage == "trial":
            assert self.current_trial is not None
            return PresentAction(self.current_trial)
        if self.stage == "rest":
            return RestAction(self._block().rest_after_ms)
        if self.stage == "questionnaire":
            return QuestionnaireAction(self.config["questionnaires"][self.q_index])
        raise MachineError(f"unknown stage {self.stage!r}")

    def submit_event(self, event: EventRecord) -> None:
        """Advance the machine by one timestamped event."""
        if self.stage == "done" and event.kind not in (EventKind.FRAME_INTERVAL,
                                                       EventKind.MARKER,
                                                       EventKind.PROTOCOL_VIOLATION):
            self._violate(f"event {event.kind.value} after session done")
            return
        handler = {
            EventKind.PHASE_TRANSITION: self._on_phase_transition,
            EventKind.PRESENT_COMMANDED: self._on_present_commanded,
            EventKind.STIMULUS_SHOWN: self._on_stimulus_shown,
            EventKind.RESPONSE: self._on_response,
            EventKind.PROMPT_SHOWN: self._on_prompt_shown,
            EventKind.PROMPT_CLEARED: self._on_prompt_cleared,
            EventKind.QUESTIONNAIRE: self._on_questionnaire,
            EventKind.FRAME_INTERVAL: self._on_frame_interval,
            EventKind.MARKER: self._on_marker,
            EventKind.PROTOCOL_VIOLATION: self._on_violation_event,
        }[event.kind]
        handler(event)

    def measured_profile(self) -> ThresholdProfile:
        pj = None
        if self.measured_pj is not None:
            pj = PjThresholds(self.measured_pj[0], self.measured_pj[1])
        return ThresholdProfile(gng=dict(self.measured_gng),
                                cj=dict(self.measured_cj), pj=pj)

    def snapshot(self) -> dict:
        """Canonical state digest; replay equality is judged on this."""
        return {
            "task": self.task,
            "seed": self.seed,
            "status": self.status.value,
            "stage": self.stage,
            "cursor": [self.phase_i, self.block_i, self.trial_i],
            "outcomes": [o.to_dict() for o in self.outcomes],
            "calibration_outcomes": [o.to_dict() for o in self.calibration_outcomes],
            "measured": {
                "gng": dict(sorted(self.measured_gng.items())),
                "cj": {f"{m.value}.{d.value}": v
                       for (m, d), v in sorted(self.measured_cj.items(),
                                               key=lambda kv: (kv[0][0].value,
                                                               kv[0][1].value))},
                "pj": list(self.measured_pj) if self.measured_pj else None,
            },
            "violations": list(self.violations),
            "questionnaires": {k: list(v) for k, v in
                               sorted(self.questionnaire_answers.items())},
            "frame_interval_count": len(self.frame_intervals),
            "plan_blocks": [
                [p.name.value, len(p.blocks)] for p in self.plan.phases
            ],
        }

    def snapshot_json(self) -> str:
        return canonical_json(self.snapshot())

    # -- cursor movement ------------------------------------------------------

    def _phase(self) -> PhasePlan:
        return self.plan.phases[self.phase_i]

    def _block(self) -> BlockPlan:
        return self._phase().blocks[self.block_i]

    def _enter_position(self) -> None:
        """Normalize the cursor onto the next actionable position."""
        while True:
            if self.phase_i >= len(self.plan.phases):
                if self.plan.deferred:
                    self._resolve_deferred()
                    continue
                if self.q_index < len(self.config.get("questionnaires", [])):
                    self.stage = "questionnaire"
                    self.awaiting = "questionnaire"
                    return
                self.stage = "done"
                self.awaiting = None
                return
            if not self._phase().blocks:
                self.phase_i += 1
                self.block_i = 0
                continue
            self.stage = "phase_enter"
            self.awaiting = "phase"
            return

    def _begin_block(self) -> None:
        block = self._block()
        self.trial_i = 0
        self.estimator = None
        if block.estimator is not None:
            self.estimator = EstimatorRuntime(kind=block.estimator["kind"],
                                              spec=dict(block.estimator))
            self._init_estimator()
        if block.cue is not None:
            self.stage = "block_cue"
            self.awaiting = "prompt_shown"
        else:
            self._begin_trial()

    def _begin_trial(self) -> None:
        block = self._block()
        self.commanded_t_ns = None
        self.shown_onset_ns = None
        if block.trials is not None:
            if self.trial_i >= len(block.trials):
                self._finish_block()
                return
            self.current_trial = block.trials[self.trial_i]
        else:
            trial = self._materialize_trial()
            if trial is None:
                self._finish_block()
                return
            self.current_trial = trial
        self.stage = "trial"
        self.awaiting = "command"

    def _finish_block(self) -> None:
        block = self._block()
        self.current_trial = None
        self.estimator = None
        if block.rest_after_ms > 0:
            self.stage = "rest"
            self.awaiting = "rest"
        else:
            self._advance_block()

    def _advance_block(self) -> None:
        phase = self._phase()
        self.block_i += 1
        self.trial_i = 0
        if self.block_i < len(phase.blocks):
            self._begin_block()
        else:
            self.phase_i += 1
            self.block_i = 0
            self._enter_position()

    def _resolve_deferred(self) -> None:
        profile = self.measured_profile()
        self.plan.phases.extend(resolve_main_phases(self.config, profile))
        self.plan.deferred = False

    # -- estimator-driven blocks ----------------------------------------------

    def _init_estimator(self) -> None:
        est = self.estimator
        assert est is not None
        spec = est.spec
        kind = est.kind
        if kind in ("gng_staircase", "cj_staircase"):
            est.staircase = new_staircase(
                start=spec["start"], step=spec["step"],
                confirmations=spec["confirmations"], max_trials=spec["max_trials"])
        elif kind == "sj_bank":
            est.bank = new_sj_bank(
                initial_step_ms=spec["initial_step_ms"], floor_ms=spec["floor_ms"],
                max_reversals=spec["max_reversals"], max_trials=spec["max_trials"],
                cap_ms=spec["soa_cap_ms"])
        elif kind == "quest":
            modality = Modality(spec["modality"])
            est.quests = {}
            for d in Direction:
                prior = self.measured_cj.get((modality, d))
                if prior is None:
                    self._violate(f"quest for {modality.value} lacks a staircase prior")
                    prior = 0.1
                prior = min(max(prior, spec["grid_min"] * 1.0001), spec["grid_max"])
                est.quests[d] = new_quest(
                    prior_mean=prior,
                    prior_sigma_octaves=spec["prior_sigma_octaves"],
                    grid_min=spec["grid_min"], grid_max=spec["grid_max"],
                    grid_points=spec["grid_points"], beta=spec["beta"],
                    gamma=spec["gamma"], delta=spec["delta"],
                    max_trials=spec["trials_per_direction"])
            rng = derive_rng(self.seed, "quest-directions", spec["modality"],
                             est.attempt)
            order = [Direction.INCREASE] * spec["trials_per_direction"] + \
                    [Direction.DECREASE] * spec["trials_per_direction"]
            idx = rng.permutation(len(order))
            est.quest_directions = [order[i] for i in idx]
        elif kind == "gng_practice":
            est.fixed_trials = self._gng_practice_trials(spec)
        elif kind == "cj_practice":
            est.fixed_trials = self._cj_practice_trials(spec)
        elif kind == "gng_verification":
            est.mode = "verify"
        elif kind == "cj_verification":
            est.mode = "verify"
        else:
            raise MachineError(f"unknown estimator kind {kind!r}")

    def _trial_rng(self, *labels) -> np.random.Generator:
        est = self.estimator
        counter = est.trial_counter if est else self.trial_i
        return derive_rng(self.seed, self.phase_i, self.block_i, counter, *labels)

    def _gng_trial_timeline(self, rng: np.random.Generator,
                            duration_ms: int) -> TrialTimeline:
        timing = self.config["timing"]["gng"]
        lo, hi = timing["iti_ms"]
        return TrialTimeline(
            stimulus_onsets_ms=(0,), stimulus_offsets_ms=(duration_ms,),
            response_open_ms=0, response_close_ms=timing["response_window_ms"],
            iti_ms=int(rng.integers(lo, hi + 1)))

    def _cj_trial_pair(self, modality: Modality, direction: Direction,
                       magnitude: float, rng: np.random.Generator,
                       companion: Optional[Modality] = None) -> tuple[tuple, TrialTimeline]:
        timing = self.config["timing"]["cj"]
        carrier = self.config["experiment"]["cj_carrier_intensity"]
        stim_ms = timing["stimulation_ms"]
        ramp = RampMs(*timing["ramp_ms"])
        pre_lo, pre_hi = timing["pre_change_ms"]
        pre = int(rng.integers(pre_lo, pre_hi + 1))
        param, shape = _CJ_PARAM_BY_MODALITY[modality]
        stimuli = [StimulusSpec(modality, param, shape, carrier, stim_ms,
                                change=ChangeSpec(direction, magnitude, ramp))]
        if companion is not None:
            cparam, cshape = _CJ_PARAM_BY_MODALITY[companion]
            stimuli.append(StimulusSpec(companion, cparam, cshape, carrier, stim_ms))
        timeline = TrialTimeline(
            stimulus_onsets_ms=tuple(0 for _ in stimuli),
            stimulus_offsets_ms=tuple(stim_ms for _ in stimuli),
            response_open_ms=stim_ms,
            response_close_ms=stim_ms + timing["response_window_ms"],
            iti_ms=int(timing["iti_ms"][0]),
            change_window_ms=(pre, pre + timing["change_ms"]))
        return tuple(stimuli), timeline

    def _gng_practice_trials(self, spec: dict) -> list[TrialSpec]:
        param = spec["param"]
        modality, p, shape = _GNG_PARAM_INFO[param]
        duration = self.config["timing"]["gng"]["stimulus_ms"]
        trials = []
        for i in range(spec["trials"]):
            rng = derive_rng(self.seed, "practice", param, i)
            stim = StimulusSpec(modality, p, shape, spec["intensity"], duration)
            trials.append(TrialSpec(Task(self.task) if self.task != "pj" else Task.SJ,
                                    (stim,), DetectLabel(param),
                                    self._gng_trial_timeline(rng, duration),
                                    self.block_i, i))
        return trials

    def _cj_practice_trials(self, spec: dict) -> list[TrialSpec]:
        trials = []
        i = 0
        for modality in Modality:
            for direction in Direction:
                for _ in range(spec["trials_per_condition"]):
                    rng = derive_rng(self.seed, "cj-practice", modality.value,
                                     direction.value, i)
                    stimuli, timeline = self._cj_trial_pair(
                        modality, direction, spec["intensity"], rng)
                    trials.append(TrialSpec(
                        Task.CJ, stimuli,
                        DetectLabel(f"cj_{modality.value}", True, direction),
                        timeline, self.block_i, i))
                    i += 1
        return trials

    def _materialize_trial(self) -> Optional[TrialSpec]:
        """Next trial of the current estimator-driven block, or None if done."""
        est = self.estimator
        assert est is not None
        if est.finished:
            return None
        kind = est.kind
        if kind in ("gng_practice", "cj_practice"):
            assert est.fixed_trials is not None
            if est.trial_counter >= len(est.fixed_trials):
                return None
            return est.fixed_trials[est.trial_counter]

        if kind == "gng_staircase":
            assert est.staircase is not None
            if est.staircase.done:
                return None
            param = est.spec["param"]
            modality, p, shape = _GNG_PARAM_INFO[param]
            duration = self.config["timing"]["gng"]["stimulus_ms"]
            rng = self._trial_rng("gng-stair")
            stim = StimulusSpec(modality, p, shape, est.staircase.level, duration)
            return TrialSpec(Task.GNG, (stim,), DetectLabel(param),
                             self._gng_trial_timeline(rng, duration),
                             self.block_i, est.trial_counter)

        if kind == "cj_staircase":
            assert est.staircase is not None
            if est.staircase.done:
                return None
            modality = Modality(est.spec["modality"])
            direction = Direction(est.spec["direction"])
            rng = self._trial_rng("cj-stair")
            stimuli, timeline = self._cj_trial_pair(
                modality, direction, est.staircase.level, rng)
            return TrialSpec(Task.CJ, stimuli,
                             DetectLabel(f"cj_{modality.value}", True, direction),
                             timeline, self.block_i, est.trial_counter)

        if kind == "sj_bank":
            assert est.bank is not None
            if est.bank.all_done:
                return None
            rng = derive_rng(self.seed, "sj-select", est.trial_counter)
            est.active_sj_id = sj_select_next(est.bank, rng)
            level = est.bank.by_id(est.active_sj_id).level
            return self._pj_threshold_trial(int(round(level)), est.trial_counter)

        if kind == "quest":
            assert est.quests is not None
            if est.trial_counter >= len(est.quest_directions):
                return None
            direction = est.quest_directions[est.trial_counter]
            state = est.quests[direction]
            level, _ = quest_query(state)
            modality = Modality(est.spec["modality"])
            companion = _QUEST_COMPANION[modality]
            rng = self._trial_rng("quest")
            stimuli, timeline = self._cj_trial_pair(modality, direction, level,
                                                    rng, companion=companion)
            return TrialSpec(Task.CJ, stimuli,
                             DetectLabel(f"cj_{modality.value}", True, direction),
                             timeline, self.block_i, est.trial_counter)

        if kind == "gng_verification":
            if est.mode == "restair":
                assert est.staircase is not None
                if est.staircase.done:
                    param = est.spec["param"]
                    self.measured_gng[param] = est.staircase.threshold
                    est.mode = "verify"
                    est.results = []
                    # falls through to a verification trial below
                else:
                    param = est.spec["param"]
                    modality, p, shape = _GNG_PARAM_INFO[param]
                    duration = self.config["timing"]["gng"]["stimulus_ms"]
                    rng = self._trial_rng("gng-restair")
                    stim = StimulusSpec(modality, p, shape, est.staircase.level,
                                        duration)
                    return TrialSpec(Task.GNG, (stim,), DetectLabel(param),
                                     self._gng_trial_timeline(rng, duration),
                                     self.block_i, est.trial_counter)
            if len(est.results) >= est.spec["trials"]:
                return None
            param = est.spec["param"]
            modality, p, shape = _GNG_PARAM_INFO[param]
            threshold = self.measured_gng.get(param, 0.5)
            level = scale_intensity(threshold, est.spec["gng_scale_percent"])
            duration = self.config["timing"]["gng"]["stimulus_ms"]
            rng = self._trial_rng("gng-verify")
            stim = StimulusSpec(modality, p, shape, level, duration)
            return TrialSpec(Task.GNG, (stim,), DetectLabel(param),
                             self._gng_trial_timeline(rng, duration),
                             self.block_i, est.trial_counter)

        if kind == "cj_verification":
            if len(est.results) >= est.spec["trials"]:
                return None
            combos = [(m, d) for m in Modality for d in Direction]
            rng = derive_rng(self.seed, "cj-verify-order", est.attempt)
            pool = combos * math.ceil(est.spec["trials"] / len(combos))
            order = rng.permutation(len(pool))
            modality, direction = pool[order[len(est.results)]]
            magnitude = self.measured_cj.get((modality, direction), 0.5)
            trial_rng = self._trial_rng("cj-verify")
            stimuli, timeline = self._cj_trial_pair(modality, direction, magnitude,
                                                    trial_rng)
            return TrialSpec(Task.CJ, stimuli,
                             DetectLabel(f"cj_{modality.value}", True, direction,
                                         judge_direction=True),
                             timeline, self.block_i, est.trial_counter)

        raise MachineError(f"unknown estimator kind {kind!r}")

    def _pj_threshold_trial(self, soa: int, counter: int) -> TrialSpec:
        timing = self.config["timing"]["pj"]
        rng = derive_rng(self.seed, "sj-trial", counter)
        lo, hi = timing["warning_delay_ms"]
        delay = int(rng.integers(lo, hi + 1))
        trailing = timing["trailing_stimulus_ms"]
        intensity = self.config["experiment"]["pj_stimulus_intensity"]
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
            warning_onset_ms=0)
        return TrialSpec(Task.SJ, stimuli, PjLabel(soa, Task.SJ), timeline,
                         self.block_i, counter)

    # -- event handlers --------------------------------------------------------

    def _violate(self, reason: str) -> None:
        self.violations.append(reason)

    def _on_violation_event(self, event: EventRecord) -> None:
        # Informational: the driver already recorded the reason.
        pass

    def _on_frame_interval(self, event: EventRecord) -> None:
        self.frame_intervals.extend(event.payload.get("intervals_ms", ()))

    def _on_phase_transition(self, event: EventRecord) -> None:
        if self.stage != "phase_enter":
            self._violate("phase_transition while not awaiting a phase")
            return
        expected = self._phase().name.value
        if event.payload.get("phase") != expected:
            self._violate(f"phase_transition {event.payload.get('phase')!r} "
                          f"expected {expected!r}")
            return
        self._started = True
        self.block_i = 0
        self._begin_block()

    def _on_prompt_shown(self, event: EventRecord) -> None:
        if self.awaiting != "prompt_shown":
            self._violate("prompt_shown while no prompt pending")
            return
        self.awaiting = "prompt_cleared"

    def _on_prompt_cleared(self, event: EventRecord) -> None:
        if self.awaiting != "prompt_cleared":
            self._violate("prompt_cleared while no prompt shown")
            return
        self._begin_trial()

    def _on_present_commanded(self, event: EventRecord) -> None:
        if self.stage != "trial" or self.awaiting != "command":
            self._violate("present_commanded while no trial pending")
            return
        self._timeout_outcome = None  # late-press grace ends at the next trial
        self.commanded_t_ns = event.t_ns
        self.awaiting = "shown"

    def _on_stimulus_shown(self, event: EventRecord) -> None:
        if self.awaiting != "shown":
            self._violate("stimulus_shown while not awaiting presentation")
            return
        onset = event.payload.get("onset_ns")
        if onset is None:
            onset = event.t_client_ns if event.t_client_ns is not None else event.t_ns
        self.shown_onset_ns = int(onset)
        self.awaiting = "resolution"

    def _on_response(self, event: EventRecord) -> None:
        button_raw = event.payload.get("button")
        try:
            button = ButtonId(button_raw)
        except ValueError:
            self._violate(f"unknown button {button_raw!r}")
            return
        t_press = event.payload.get("t_press_ns")
        if t_press is None:
            t_press = event.t_client_ns if event.t_client_ns is not None else event.t_ns

        if self.awaiting == "resolution" and self.current_trial is not None:
            trial = self.current_trial
            elapsed_ms = (t_press - self.shown_onset_ns) / 1e6
            open_ms = trial.timing.response_open_ms
            close_ms = trial.timing.response_close_ms
            if elapsed_ms < open_ms:
                self._violate("response before the response window opened")
                return
            if elapsed_ms > close_ms:
                self._resolve_trial(button=button, rt_ms=None, in_window=False,
                                    late=True)
                return
            reference = open_ms
            rt_ms = elapsed_ms - reference
            self._resolve_trial(button=button, rt_ms=rt_ms, in_window=True)
            return

        if self._timeout_outcome is not None:
            # Late press after a timeout-resolved trial, before the next one.
            outcome = self._timeout_outcome
            outcome.classification = Classification.LATE
            outcome.late = True
            outcome.button = button
            self._timeout_outcome = None
            return
        self._violate("response while no trial awaited one")

    def _on_marker(self, event: EventRecord) -> None:
        name = event.payload.get("name")
        if name == "window_closed":
            if self.awaiting == "resolution" and self.current_trial is not None:
                self._resolve_trial(button=None, rt_ms=None, in_window=False)
            # Otherwise the trial already resolved; markers are idempotent.
            return
        if name == "rest_complete":
            if self.stage != "rest":
                self._violate("rest_complete while not resting")
                return
            self._advance_block()
            return
        if name == "session_suspended":
            self.suspended = True
            if self.awaiting in ("shown", "resolution"):
                # Unresolved trial will be re-presented after resume.
                self.awaiting = "command"
                self.commanded_t_ns = None
                self.shown_onset_ns = None
            if self.awaiting in ("prompt_shown", "prompt_cleared"):
                self.awaiting = "prompt_shown"
            return
        if name == "session_resumed":
            self.suspended = False
            return
        # trial_window and unknown markers are informational.

    def _on_questionnaire(self, event: EventRecord) -> None:
        if self.awaiting != "questionnaire":
            self._violate("questionnaire answer while none requested")
            return
        kind = event.payload.get("kind")
        expected = self.config["questionnaires"][self.q_index]
        if kind != expected:
            self._violate(f"questionnaire {kind!r} does not match requested {expected!r}")
            return
        self.questionnaire_answers[kind] = list(event.payload.get("answers", ()))
        self.q_index += 1
        self._enter_position()

    # -- trial resolution -------------------------------------------------------

    def _resolve_trial(self, button: Optional[ButtonId], rt_ms: Optional[float],
                       in_window: bool, late: bool = False) -> None:
        trial = self.current_trial
        assert trial is not None
        block = self._block()
        phase = self._phase()
        classification, judgment = score_trial(trial, button, in_window)
        if late:
            classification = Classification.LATE
        is_calibration = block.estimator is not None
        level = None
        if is_calibration and trial.stimuli:
            first = trial.stimuli[0]
            if isinstance(trial.label, PjLabel):
                level = float(trial.label.soa_ms)
            elif first.change is not None:
                level = first.change.magnitude
            else:
                level = first.intensity
        outcome = TrialOutcome(
            phase=phase.name, block_index=trial.block_index,
            trial_index=trial.trial_index, block_name=block.name,
            block_kind=block.kind, task=trial.task,
            condition=trial_condition(trial), difficulty=block.difficulty,
            label=_label_summary(trial), button=button, rt_ms=rt_ms,
            classification=classification, judgment=judgment, late=late,
            level=level)
        target = self.calibration_outcomes if is_calibration else self.outcomes
        target.append(outcome)
        if not in_window and button is None:
            self._timeout_outcome = outcome

        if self.estimator is not None:
            self._route_to_estimator(outcome, responded=in_window and button is not None)
        else:
            self.trial_i += 1
        self._begin_trial()

    def _route_to_estimator(self, outcome: TrialOutcome, responded: bool) -> None:
        est = self.estimator
        assert est is not None
        kind = est.kind
        trial = self.current_trial
        assert trial is not None

        if kind in ("gng_practice", "cj_practice"):
            est.trial_counter += 1
            if est.fixed_trials is not None and est.trial_counter >= len(est.fixed_trials):
                est.finished = True
            return

        if kind == "gng_staircase" or kind == "cj_staircase":
            assert est.staircase is not None
            response = Response.DETECTED if responded else Response.NOT_DETECTED
            est.staircase = staircase_step(est.staircase, response)
            est.trial_counter += 1
            if est.staircase.done:
                threshold = est.staircase.threshold
                if kind == "gng_staircase":
                    self.measured_gng[est.spec["param"]] = threshold
                else:
                    key = (Modality(est.spec["modality"]),
                           Direction(est.spec["direction"]))
                    self.measured_cj[key] = threshold
                est.finished = True
            return

        if kind == "sj_bank":
            assert est.bank is not None and est.active_sj_id is not None
            if not responded:
                # 2AFC trials are re-presented until answered.
                est.trial_counter += 1
                return
            response = (SjResponse.SIMULTANEOUS if outcome.judgment == "simultaneous"
                        else SjResponse.NOT_SIMULTANEOUS)
            est.bank = sj_staircase_update(est.bank, est.active_sj_id, response)
            est.trial_counter += 1
            if est.bank.all_done:
                self.measured_pj = sj_thresholds(est.bank)
                est.finished = True
            return

        if kind == "quest":
            assert est.quests is not None
            direction = est.quest_directions[est.trial_counter]
            state = est.quests[direction]
            level = trial.stimuli[0].change.magnitude if trial.stimuli[0].change else 0.0
            response = Response.DETECTED if responded else Response.NOT_DETECTED
            est.quests[direction] = quest_update(state, level, response)
            est.trial_counter += 1
            if est.trial_counter >= len(est.quest_directions):
                modality = Modality(est.spec["modality"])
                for d, q in est.quests.items():
                    _, estimate = quest_query(q)
                    self.measured_cj[(modality, d)] = min(1.0, estimate)
                est.finished = True
            return

        if kind == "gng_verification":
            if est.mode == "restair":
                assert est.staircase is not None
                response = Response.DETECTED if responded else Response.NOT_DETECTED
                est.staircase = staircase_step(est.staircase, response)
                est.trial_counter += 1
                return
            est.results.append(outcome.classification is Classification.HIT)
            est.trial_counter += 1
            if len(est.results) >= est.spec["trials"]:
                gate = verification_gate(est.results, est.spec["pass_fraction"])
                if gate is Gate.PASS or est.attempt + 1 >= est.spec["max_attempts"]:
                    if gate is Gate.REPEAT:
                        self._violate(
                            f"verification for {est.spec['param']} accepted after "
                            f"{est.attempt + 1} attempts without passing")
                    est.finished = True
                else:
                    est.attempt += 1
                    est.mode = "restair"
                    sc = self.config["thresholding"]["staircase"]
                    est.staircase = new_staircase(
                        start=sc["start"], step=sc["step"],
                        confirmations=sc["confirmations"],
                        max_trials=sc["max_trials"])
                    est.results = []
            return

        if kind == "cj_verification":
            if not responded:
                est.trial_counter += 1
                return
            est.results.append(outcome.classification is Classification.CORRECT)
            est.trial_counter += 1
            if len(est.results) >= est.spec["trials"]:
                gate = verification_gate(est.results, est.spec["pass_fraction"])
                if gate is Gate.PASS or est.attempt + 1 >= est.spec["max_attempts"]:
                    if gate is Gate.REPEAT:
                        self._violate("cj verification accepted after max attempts")
                    est.finished = True
                else:
                    est.attempt += 1
                    factor = est.spec["raise_factor"]
                    for key, value in list(self.measured_cj.items()):
                        self.measured_cj[key] = min(1.0, value * factor)
                    est.results = []
            return

        raise MachineError(f"unroutable estimator kind {kind!r}")


_QUEST_COMPANION = {
    Modality.VISUAL: Modality.AUDITORY,
    Modality.AUDITORY: Modality.TACTILE,
    Modality.TACTILE: Modality.VISUAL,
}


def _label_summary(trial: TrialSpec) -> dict:
    from .sequencing import _label_to_dict

    return _label_to_dict(trial.label)


def task_next_action(session: TaskSession) -> Action:
    return session.next_action()


def task_submit_event(session: TaskSession, event: EventRecord) -> TaskSession:
    session.submit_event(event)
    return session
