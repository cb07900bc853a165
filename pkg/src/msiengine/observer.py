"""Parametric simulated participants.

A SimObserver answers every trial type the engine can present:
detection of near-threshold stimuli (logistic psychometric), judged
simultaneity of audiovisual pairs (scaled Gaussian window), temporal
order (cumulative Gaussian), congruency of attended change directions
(per-modality percepts), and lognormal reaction times with per-condition
offsets so analysis tests can plant known effects.

Observers are pure oracles for the thresholding and session machinery;
they make no claim of modeling human data.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .model import ButtonId, Direction, Modality, Param, Role
from .sequencing import CjLabel, DetectLabel, GngLabel, PjLabel, Task, TrialSpec


@dataclass(frozen=True)
class DetectionCurve:
    """Logistic detection probability for one (modality, param) channel."""

    threshold: float
    spread: float
    guess: float = 0.0
    lapse: float = 0.0


@dataclass(frozen=True)
class SjModel:
    center_ms: float = 0.0
    width_ms: float = 70.0
    lapse: float = 0.02


@dataclass(frozen=True)
class TojModel:
    pss_ms: float = 0.0
    jnd_ms: float = 60.0
    lapse: float = 0.02


@dataclass(frozen=True)
class RtModel:
    mu_log: float = math.log(350.0)
    sigma_log: float = 0.2
    #: Mean shift in ms keyed by number of cue modalities ("1", "2", "3").
    condition_offsets_ms: Mapping[str, float] = field(default_factory=dict)


@dataclass
class SimObserver:
    detection: dict[tuple[Modality, Param], DetectionCurve]
    sj: SjModel = SjModel()
    toj: TojModel = TojModel()
    rt: RtModel = RtModel()
    gng_false_press: float = 0.0
    #: Render latency between commanded and actual onset, drawn per trial.
    present_latency_ms: tuple[float, float] = (5.0, 20.0)
    seed: int = 0

    def __post_init__(self) -> None:
        for curve in self.detection.values():
            if curve.spread <= 0:
                raise ValueError("detection spread must be > 0")
        if self.sj.width_ms <= 0 or self.toj.jnd_ms <= 0:
            raise ValueError("sj width and toj jnd must be > 0")
        if self.present_latency_ms[0] < 0:
            raise ValueError("present latency must be >= 0")
        self._rng = np.random.default_rng(self.seed)
        self._latency_rng = np.random.default_rng(
            np.random.SeedSequence([self.seed & 0xFFFFFFFF, 0x1A7E]))

    def fork(self) -> "SimObserver":
        """Fresh copy with rewound RNG, for rerunning the same session."""
        return SimObserver(detection=dict(self.detection), sj=self.sj, toj=self.toj,
                           rt=self.rt, gng_false_press=self.gng_false_press,
                           present_latency_ms=self.present_latency_ms, seed=self.seed)

    def draw_latency_ms(self) -> float:
        lo, hi = self.present_latency_ms
        if hi <= lo:
            return float(lo)
        return float(self._latency_rng.uniform(lo, hi))


def _logistic(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def psychometric_prob(observer: SimObserver, modality: Modality, param: Param,
                      intensity: float) -> float:
    """gamma + (1 - gamma - lambda) * logistic((x - threshold) / spread)."""
    curve = observer.detection[(modality, param)]
    z = (intensity - curve.threshold) / curve.spread
    p = curve.guess + (1.0 - curve.guess - curve.lapse) * _logistic(z)
    return min(1.0, max(0.0, p))


def sj_probability(observer: SimObserver, soa_ms: float) -> float:
    """P(judged simultaneous): scaled Gaussian window plus lapse floor."""
    m = observer.sj
    core = math.exp(-((soa_ms - m.center_ms) ** 2) / (2.0 * m.width_ms ** 2))
    return (1.0 - m.lapse) * core + m.lapse / 2.0


def sj_analytic_crossings(observer: SimObserver) -> tuple[float, float]:
    """SOAs where P(simultaneous) crosses 0.5, one per side of the center."""
    m = observer.sj
    half_width = m.width_ms * math.sqrt(2.0 * math.log(2.0))
    return (m.center_ms - half_width, m.center_ms + half_width)


def toj_visual_first_probability(observer: SimObserver, soa_ms: float) -> float:
    """P(answers 'visual first'): lapse-adjusted cumulative Gaussian in SOA."""
    m = observer.toj
    z = (soa_ms - m.pss_ms) / m.jnd_ms
    phi = 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))
    return m.lapse / 2.0 + (1.0 - m.lapse) * phi


def cj_direction_correct_probability(observer: SimObserver, modality: Modality,
                                     param: Param, magnitude: float) -> float:
    """P(percept of the change direction is correct); guesses when undetected."""
    p_detect = psychometric_prob(observer, modality, param, magnitude)
    return p_detect + (1.0 - p_detect) / 2.0


@dataclass(frozen=True)
class SimResponse:
    button: Optional[ButtonId]
    rt_ms: Optional[float]


def _draw_rt(observer: SimObserver, offset_key: str) -> float:
    base = math.exp(observer._rng.normal(observer.rt.mu_log, observer.rt.sigma_log))
    return base + observer.rt.condition_offsets_ms.get(offset_key, 0.0)


def sim_respond(observer: SimObserver, trial: TrialSpec) -> SimResponse:
    """Draw the observer's response (or absence) for one trial."""
    rng = observer._rng
    label = trial.label

    if isinstance(label, GngLabel):
        pressed = False
        for stim in trial.stimuli:
            role = label.cue.roles[stim.modality]
            if role is not Role.GO:
                continue
            if stim.modality is Modality.TACTILE:
                # A tactile Go is the absence of vibration inside a marked
                # trial window; noticing it fails only through lapse.
                curve = observer.detection.get((stim.modality, stim.param))
                p = 1.0 - (curve.lapse if curve else 0.0)
            else:
                p = psychometric_prob(observer, stim.modality, stim.param, stim.intensity)
            if rng.random() < p:
                pressed = True
        if not pressed and not label.is_go and rng.random() < observer.gng_false_press:
            pressed = True
        if not pressed:
            return SimResponse(None, None)
        key = str(len(label.cue.roles))
        return SimResponse(ButtonId.X, _draw_rt(observer, key))

    if isinstance(label, PjLabel):
        if label.judgment is Task.SJ:
            simultaneous = rng.random() < sj_probability(observer, label.soa_ms)
            button = ButtonId.R2 if simultaneous else ButtonId.L2
        else:
            visual_first = rng.random() < toj_visual_first_probability(observer, label.soa_ms)
            button = ButtonId.R2 if visual_first else ButtonId.L2
        return SimResponse(button, _draw_rt(observer, "pj"))

    if isinstance(label, CjLabel):
        percepts: dict[Modality, Direction] = {}
        for stim in trial.stimuli:
            true_dir = label.dirs[stim.modality]
            magnitude = stim.change.magnitude if stim.change else 0.0
            p = cj_direction_correct_probability(observer, stim.modality,
                                                 stim.param, magnitude)
            if rng.random() < p:
                percepts[stim.modality] = true_dir
            else:
                percepts[stim.modality] = (Direction.DECREASE
                                           if true_dir is Direction.INCREASE
                                           else Direction.INCREASE)
        a, b = label.focus.attended
        congruent = percepts[a] == percepts[b]
        button = ButtonId.R2 if congruent else ButtonId.L2
        return SimResponse(button, _draw_rt(observer, "cj"))

    if isinstance(label, DetectLabel):
        stim = trial.stimuli[0]
        level = stim.change.magnitude if stim.change is not None else stim.intensity
        if label.judge_direction:
            p = cj_direction_correct_probability(observer, stim.modality,
                                                 stim.param, level)
            correct = rng.random() < p
            true_up = label.direction is Direction.INCREASE
            answered_up = correct == true_up
            return SimResponse(ButtonId.R2 if answered_up else ButtonId.L2,
                               _draw_rt(observer, "detect"))
        if rng.random() < psychometric_prob(observer, stim.modality, stim.param, level):
            return SimResponse(ButtonId.X, _draw_rt(observer, "detect"))
        return SimResponse(None, None)

    raise TypeError(f"unhandled trial label {type(label)!r}")


def answers_for_questionnaire(observer: SimObserver, kind: str) -> list[float]:
    rng = observer._rng
    if kind == "nasa_tlx":
        return [float(rng.integers(20, 81)) for _ in range(6)]
    if kind == "presence":
        return [float(rng.integers(3, 8)) for _ in range(3)]
    raise ValueError(f"unknown questionnaire kind {kind!r}")


# ---------------------------------------------------------------------------
# Observer documents

_PARAM_KEYS = {
    "visual.opacity": (Modality.VISUAL, Param.OPACITY),
    "visual.contrast": (Modality.VISUAL, Param.CONTRAST),
    "auditory.volume": (Modality.AUDITORY, Param.VOLUME),
    "auditory.tone-amplitude": (Modality.AUDITORY, Param.TONE_AMPLITUDE),
    "tactile.vibration-drive": (Modality.TACTILE, Param.VIBRATION_DRIVE),
}


def default_observer(seed: int = 1234) -> SimObserver:
    detection = {
        key: DetectionCurve(threshold=th, spread=0.03, guess=0.02, lapse=0.02)
        for key, th in zip(
            _PARAM_KEYS.values(), (0.20, 0.22, 0.15, 0.18, 0.25))
    }
    return SimObserver(
        detection=detection,
        sj=SjModel(center_ms=20.0, width_ms=70.0, lapse=0.04),
        toj=TojModel(pss_ms=10.0, jnd_ms=60.0, lapse=0.04),
        rt=RtModel(condition_offsets_ms={"1": 70.0, "2": 30.0, "3": 0.0}),
        gng_false_press=0.02,
        seed=seed,
    )


def observer_to_dict(observer: SimObserver) -> dict:
    inverse = {v: k for k, v in _PARAM_KEYS.items()}
    return {
        "seed": observer.seed,
        "present_latency_ms": list(observer.present_latency_ms),
        "detection": {
            inverse[key]: {"threshold": c.threshold, "spread": c.spread,
                           "guess": c.guess, "lapse": c.lapse}
            for key, c in observer.detection.items()
        },
        "sj": {"center_ms": observer.sj.center_ms, "width_ms": observer.sj.width_ms,
               "lapse": observer.sj.lapse},
        "toj": {"pss_ms": observer.toj.pss_ms, "jnd_ms": observer.toj.jnd_ms,
                "lapse": observer.toj.lapse},
        "rt": {"mu_log": observer.rt.mu_log, "sigma_log": observer.rt.sigma_log,
               "condition_offsets_ms": dict(observer.rt.condition_offsets_ms)},
        "gng_false_press": observer.gng_false_press,
    }


def observer_from_dict(data: Mapping) -> SimObserver:
    detection = {}
    for key, c in (data.get("detection") or {}).items():
        detection[_PARAM_KEYS[key]] = DetectionCurve(
            threshold=c["threshold"], spread=c["spread"],
            guess=c.get("guess", 0.0), lapse=c.get("lapse", 0.0))
    sj = SjModel(**data["sj"]) if data.get("sj") else SjModel()
    toj = TojModel(**data["toj"]) if data.get("toj") else TojModel()
    rt = RtModel(**data["rt"]) if data.get("rt") else RtModel()
    latency = tuple(data.get("present_latency_ms", (5.0, 20.0)))
    return SimObserver(detection=detection, sj=sj, toj=toj, rt=rt,
                       gng_false_press=data.get("gng_false_press", 0.0),
                       present_latency_ms=latency, seed=data.get("seed", 0))


def load_observer(path: str) -> SimObserver:
    with open(path, "r", encoding="utf-8") as fh:
        return observer_from_dict(json.load(fh))
